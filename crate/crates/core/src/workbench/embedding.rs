//! Token table initialisation from document co-occurrence.
//!
//! Each document draws a random Gaussian signature; a word's vector is the
//! sum of the signatures of the documents it occurs in (random indexing),
//! rescaled to norm `sqrt(dim)`. Words that share documents end up close.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::memory::Corpus;
use crate::model::Model;

/// Which corpora feed the co-occurrence table and how strongly it replaces
/// the random token rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInit {
    pub corpora: Vec<String>,
    /// 0 keeps the random rows, 1 replaces them.
    pub weight: f64,
}

impl EmbeddingInit {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::config("embedding_init.weight", "must lie in [0, 1]"));
        }
        if self.corpora.is_empty() {
            return Err(Error::config("embedding_init.corpora", "is empty"));
        }
        Ok(())
    }
}

/// One row per vocabulary id; `None` for reserved ids and words that never
/// occur in `corpora`.
pub fn cooccurrence_vectors<R: Rng>(
    corpora: &[&Corpus],
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; vocab.len()];
    let mut seen = vec![false; vocab.len()];
    let mut signature = vec![0.0; dim];
    for corpus in corpora {
        for doc in corpus.documents() {
            for s in signature.iter_mut() {
                *s = rng.sample(StandardNormal);
            }
            for id in vocab.tokenize(&doc.full_text(), usize::MAX).into_iter().skip(1) {
                let id = id as usize;
                if id < crate::model::NUM_RESERVED {
                    continue;
                }
                seen[id] = true;
                for (a, s) in sums[id].iter_mut().zip(&signature) {
                    *a += s;
                }
            }
        }
    }
    let scale = (dim as f64).sqrt();
    sums.into_iter()
        .zip(seen)
        .map(|(v, seen)| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (seen && norm > 0.0).then(|| v.iter().map(|x| x / norm * scale).collect())
        })
        .collect()
}

/// Blends the co-occurrence table of `corpora` into every model.
pub fn init_token_embeddings<R: Rng>(
    models: &mut [&mut Model],
    corpora: &[&Corpus],
    vocab: &Vocabulary,
    weight: f64,
    rng: &mut R,
) -> Result<()> {
    let Some(first) = models.first() else { return Ok(()) };
    let rows = cooccurrence_vectors(corpora, vocab, first.config().model_dim, rng);
    for m in models.iter_mut() {
        m.blend_token_embeddings(&rows, weight)?;
    }
    Ok(())
}
