use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::SearchMode;

/// Training schedule and sampling sizes. Defaults are desk-scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub epochs_per_episode: usize,
    pub warmup_epochs: usize,
    /// Augmentation documents per query; 0 trains a plain dual encoder.
    pub k: usize,
    /// Attention-selected pseudo-positives per query.
    pub n: usize,
    pub mining_depth: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Positives sampled per query and epoch; `None` uses all of them.
    pub positives_per_query: Option<usize>,
    pub index_mode: SearchMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 3,
            epochs_per_episode: 3,
            warmup_epochs: 2,
            k: 10,
            n: 5,
            mining_depth: 200,
            negatives: 7,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            positives_per_query: None,
            index_mode: SearchMode::Exact,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule of the original large-scale setup.
    pub fn large_scale() -> Self {
        TrainConfig {
            warmup_epochs: 10,
            batch_size: 256,
            learning_rate: 5e-6,
            ..TrainConfig::default()
        }
    }

    pub fn augmented(&self) -> bool {
        self.k > 0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("epochs_per_episode", self.epochs_per_episode),
            ("n", self.n),
            ("mining_depth", self.mining_depth),
            ("negatives", self.negatives),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.k > 0 && self.k < self.n {
            return Err(Error::config("k", format!("K = {} is below N = {}", self.k, self.n)));
        }
        if self.mining_depth < self.negatives {
            return Err(Error::config("mining_depth", "must be at least the negative count"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        if self.positives_per_query == Some(0) {
            return Err(Error::config("positives_per_query", "must be positive when set"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_presets_validate() {
        TrainConfig::default().validate().unwrap();
        let p = TrainConfig::large_scale();
        p.validate().unwrap();
        assert_eq!((p.batch_size, p.warmup_epochs, p.learning_rate), (256, 10, 5e-6));
        assert_eq!((p.episodes, p.epochs_per_episode, p.k, p.n, p.mining_depth, p.negatives), (3, 3, 10, 5, 200, 7));
    }

    #[test]
    fn rejects_inconsistent_values() {
        let bad = TrainConfig {
            k: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "k"));
        let de = TrainConfig {
            k: 0,
            ..TrainConfig::default()
        };
        de.validate().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
