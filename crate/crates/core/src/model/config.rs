use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the toy encoder-decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    /// Layer count for the encoder and for the decoder.
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub max_query_len: usize,
    pub max_doc_len: usize,
    /// Grounding documents fused per query.
    pub k_default: usize,
    pub layer_norm_eps: f64,
    /// Keeps the random token table fixed during training.
    pub freeze_token_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 8192,
            model_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 128,
            max_query_len: 32,
            max_doc_len: 128,
            k_default: 10,
            layer_norm_eps: 1e-6,
            freeze_token_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("model_dim", self.model_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("feedforward_dim", self.feedforward_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::config(
                "num_heads",
                format!("model_dim {} is not divisible by {}", self.model_dim, self.num_heads),
            ));
        }
        if self.max_query_len < 2 {
            return Err(Error::config("max_query_len", "must be at least 2"));
        }
        if self.max_doc_len < 2 {
            return Err(Error::config("max_doc_len", "must be at least 2"));
        }
        if self.vocab_size <= super::UNK_ID as usize {
            return Err(Error::config("vocab_size", "must cover the reserved ids"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps", "must be positive"));
        }
        Ok(())
    }

    /// Position table length, shared by query and document segments.
    pub fn max_positions(&self) -> usize {
        self.max_query_len.max(self.max_doc_len)
    }
}
