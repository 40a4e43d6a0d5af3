use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    CorpusEncoding,
    IndexBuild,
    QueryEncoding,
    AnnSearch,
    ExactSearch,
    NegativeConstruction,
    OptimizerStep,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::CorpusEncoding,
        Phase::IndexBuild,
        Phase::QueryEncoding,
        Phase::AnnSearch,
        Phase::ExactSearch,
        Phase::NegativeConstruction,
        Phase::OptimizerStep,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub seconds: f64,
    pub calls: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub phases: Vec<PhaseTiming>,
}

impl TimingReport {
    pub fn seconds(&self, phase: Phase) -> f64 {
        self.phases.iter().find(|p| p.phase == phase).map_or(0.0, |p| p.seconds)
    }
}

/// Thread-safe wall-clock accumulator keyed by phase.
#[derive(Debug, Default)]
pub struct Timings {
    totals: Mutex<BTreeMap<Phase, (Duration, u64)>>,
}

impl Timings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, phase: Phase, elapsed: Duration) {
        let mut t = self.totals.lock().unwrap_or_else(|e| e.into_inner());
        let e = t.entry(phase).or_default();
        e.0 += elapsed;
        e.1 += 1;
    }

    pub fn time<T>(&self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(phase, start.elapsed());
        out
    }

    /// Every phase, with zero entries for phases never timed.
    pub fn report(&self) -> TimingReport {
        let t = self.totals.lock().unwrap_or_else(|e| e.into_inner());
        TimingReport {
            phases: Phase::ALL
                .iter()
                .map(|&phase| {
                    let (d, calls) = t.get(&phase).copied().unwrap_or_default();
                    PhaseTiming {
                        phase,
                        seconds: d.as_secs_f64(),
                        calls,
                    }
                })
                .collect(),
        }
    }
}
