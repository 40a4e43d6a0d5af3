use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DocKey, SearchResult};

/// Counts per label class and their shares of the total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionStats {
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub ratios: BTreeMap<String, f64>,
}

impl AttributionStats {
    pub fn ratio(&self, class: &str) -> f64 {
        self.ratios.get(class).copied().unwrap_or(0.0)
    }
}

/// Tallies `keys` by the class `classify` assigns them.
pub fn attribution_stats<'a, I, F>(keys: I, mut classify: F) -> AttributionStats
where
    I: IntoIterator<Item = &'a DocKey>,
    F: FnMut(&DocKey) -> String,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for k in keys {
        *counts.entry(classify(k)).or_default() += 1;
        total += 1;
    }
    let ratios = counts
        .iter()
        .map(|(c, &n)| (c.clone(), n as f64 / total as f64))
        .collect();
    AttributionStats { total, counts, ratios }
}

/// Per-corpus shares over many result lists.
pub fn corpus_attribution(results: &[SearchResult]) -> AttributionStats {
    attribution_stats(results.iter().flat_map(SearchResult::keys), |k| k.corpus_id.clone())
}
