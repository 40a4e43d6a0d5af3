//! Ranking metrics, run evaluation, learning-dynamics curves and timings.

mod dynamics;
mod io;
mod ndcg;
mod run;
mod timing;

pub use dynamics::{
    classify_doc, track_dynamics, write_curves_csv, AugmentedDoc, DynamicsCurve, EpisodeLog, QueryAugmentation,
    SOURCE_OTHER, SOURCE_RELEVANT,
};
pub use io::{QrelSet, Query, QuerySet};
pub use ndcg::ndcg_at_k;
pub use run::{evaluate_run, QueryReport, RankedDoc, Retriever, RunReport};
pub use timing::{Phase, PhaseTiming, TimingReport, Timings};
