//! Provenance-tagged corpora behind one vector index.

mod doc;
mod ivf;
mod mixture;
mod persist;
mod stats;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use doc::{Corpus, DocKey, Document};
pub use ivf::IvfParams;
pub use mixture::{MemoryMixture, MinedNegatives};
pub use stats::{attribution_stats, corpus_attribution, AttributionStats};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Exact,
    Approx,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(SearchMode::Exact),
            "approx" => Ok(SearchMode::Approx),
            other => Err(format!("unknown index mode `{other}` (expected exact or approx)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub key: DocKey,
    pub score: f64,
}

/// Descending score, then ascending `(corpus_id, doc_id)`.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key))
}

/// Ranked hits, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &DocKey> {
        self.hits.iter().map(|h| &h.key)
    }
}

/// Produces the embedding stored for each document.
pub trait DocEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, doc: &Document) -> Result<Vec<f64>>;
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
