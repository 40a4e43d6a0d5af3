//! Per-document attention mass from the fused decoder, and pseudo-positive
//! labels built from it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::DocKey;
use crate::model::{CrossAttentionRecord, SegmentSource};

/// Default number of attention-selected pseudo-positives.
pub const DEFAULT_TOP_N: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain sum over layers, heads and the segment's positions.
    #[default]
    Sum,
    /// Sum divided by the segment's length.
    LengthNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidAttScores {
    pub query_id: String,
    pub episode: usize,
    /// Mass the decoder put on the query's own segment.
    pub query_mass: f64,
    /// One entry per augmentation document, in segment order.
    pub scores: Vec<(DocKey, f64)>,
}

impl FidAttScores {
    pub fn get(&self, key: &DocKey) -> Option<f64> {
        self.scores.iter().find(|(k, _)| k == key).map(|&(_, s)| s)
    }

    /// Query mass plus every document score.
    pub fn total_mass(&self) -> f64 {
        self.query_mass + self.scores.iter().map(|(_, s)| s).sum::<f64>()
    }
}

/// Sums the attention each augmentation segment received. `docs[i]` names
/// the document behind `SegmentSource::Augmentation(i)`.
pub fn aggregate_fidatt(
    record: &CrossAttentionRecord,
    docs: &[DocKey],
    query_id: &str,
    episode: usize,
    aggregation: Aggregation,
) -> Result<FidAttScores> {
    if record.spans().is_empty() {
        return Err(Error::contract("attention record has no segments"));
    }
    let mut query_mass = 0.0;
    let mut scores: Vec<(DocKey, f64)> = Vec::with_capacity(docs.len());
    for span in record.spans() {
        let mass: f64 = record
            .rows()
            .map(|row| row[span.start..span.end()].iter().sum::<f64>())
            .sum();
        match span.source {
            SegmentSource::Query => query_mass += mass,
            SegmentSource::Augmentation(i) => {
                let key = docs.get(i).ok_or_else(|| {
                    Error::contract(format!("augmentation segment {i} has no document key ({} given)", docs.len()))
                })?;
                let value = match aggregation {
                    Aggregation::Sum => mass,
                    Aggregation::LengthNormalized => mass / span.len as f64,
                };
                scores.push((key.clone(), value));
            }
            SegmentSource::Document => {
                return Err(Error::contract("plain document segment inside a fused record"));
            }
        }
    }
    if scores.len() != docs.len() {
        return Err(Error::contract(format!("{} document keys for {} segments", docs.len(), scores.len())));
    }
    Ok(FidAttScores {
        query_id: query_id.to_string(),
        episode,
        query_mass,
        scores,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_relevant: bool,
    pub attention_selected: bool,
}

/// Positives for augmenter training, plus the scored documents left out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoPositiveSet {
    pub members: BTreeMap<DocKey, Provenance>,
    /// Scored documents that were not selected.
    pub unselected: Vec<DocKey>,
}

impl PseudoPositiveSet {
    pub fn contains(&self, key: &DocKey) -> bool {
        self.members.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &DocKey> {
        self.members.keys()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Documents any negative sampling for this query must skip.
    pub fn exclusion_set(&self) -> std::collections::HashSet<DocKey> {
        self.members.keys().cloned().collect()
    }
}

/// Orders by score descending, then document id ascending (corpus id last).
fn attention_order(a: &(DocKey, f64), b: &(DocKey, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.doc_id.cmp(&b.0.doc_id))
        .then_with(|| a.0.corpus_id.cmp(&b.0.corpus_id))
}

/// Source positives united with the `n` best-scoring augmentation documents.
pub fn select_pseudo_positives(
    scores: &FidAttScores,
    source_positives: &BTreeSet<DocKey>,
    n: usize,
) -> Result<PseudoPositiveSet> {
    if n == 0 {
        return Err(Error::contract("N must be at least 1"));
    }
    let mut ranked = scores.scores.clone();
    ranked.sort_by(attention_order);
    ranked.dedup_by(|a, b| a.0 == b.0);
    let mut members: BTreeMap<DocKey, Provenance> = source_positives
        .iter()
        .map(|k| {
            let p = Provenance {
                source_relevant: true,
                attention_selected: false,
            };
            (k.clone(), p)
        })
        .collect();
    let mut unselected = Vec::new();
    for (i, (key, _)) in ranked.into_iter().enumerate() {
        if i < n {
            members.entry(key).or_default().attention_selected = true;
        } else if !members.contains_key(&key) {
            unselected.push(key);
        }
    }
    Ok(PseudoPositiveSet { members, unselected })
}

/// One exported line per (query, document).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidAttRow {
    pub query_id: String,
    pub episode: usize,
    pub doc_id: String,
    pub corpus_id: String,
    pub fidatt: f64,
}

impl FidAttScores {
    pub fn rows(&self) -> impl Iterator<Item = FidAttRow> + '_ {
        self.scores.iter().map(|(k, s)| FidAttRow {
            query_id: self.query_id.clone(),
            episode: self.episode,
            doc_id: k.doc_id.clone(),
            corpus_id: k.corpus_id.clone(),
            fidatt: *s,
        })
    }
}

pub fn write_fidatt_jsonl<'a>(out: &mut impl Write, scores: impl IntoIterator<Item = &'a FidAttScores>) -> Result<()> {
    for s in scores {
        for row in s.rows() {
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n").map_err(|e| Error::io("<fidatt export>", e))?;
        }
    }
    Ok(())
}
