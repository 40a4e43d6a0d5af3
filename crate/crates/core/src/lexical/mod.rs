//! Okapi BM25 over an in-memory inverted index.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::memory::{DocKey, Hit, MinedNegatives, SearchResult};

/// Lowercased alphanumeric runs of `text`.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    /// Documents sorted by key; postings refer to positions in this list.
    docs: Vec<DocKey>,
    lengths: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl InvertedIndex {
    /// Indexes `(key, text)` pairs; duplicate keys keep the last text.
    pub fn build<I, S>(docs: I, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (DocKey, S)>,
        S: AsRef<str>,
    {
        let sorted: BTreeMap<DocKey, Vec<String>> = docs.into_iter().map(|(k, t)| (k, terms(t.as_ref()))).collect();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut keys = Vec::with_capacity(sorted.len());
        let mut lengths = Vec::with_capacity(sorted.len());
        for (i, (key, toks)) in sorted.into_iter().enumerate() {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            lengths.push(toks.len() as u32);
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i as u32, n));
            }
            keys.push(key);
        }
        let avg_len = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / lengths.len() as f64
        };
        InvertedIndex {
            params,
            docs: keys,
            lengths,
            avg_len,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` documents; every occurrence of a query term contributes.
    pub fn search(&self, query_terms: &[String], k: usize) -> SearchResult {
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in query_terms {
            let plist = self.postings(term);
            if plist.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for &(doc, tf) in plist {
                let tf = f64::from(tf);
                let norm = k1 * (1.0 - b + b * f64::from(self.lengths[doc as usize]) / self.avg_len);
                *scores.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        // Positions follow key order, so the position breaks ties.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        SearchResult {
            hits: ranked
                .into_iter()
                .map(|(d, score)| Hit {
                    key: self.docs[d as usize].clone(),
                    score,
                })
                .collect(),
        }
    }

    pub fn search_text(&self, query: &str, k: usize) -> SearchResult {
        self.search(&terms(query), k)
    }

    /// The first `count` hits that are not positives.
    pub fn warmup_negatives(&self, query_terms: &[String], positives: &HashSet<DocKey>, count: usize) -> MinedNegatives {
        let docs: Vec<DocKey> = self
            .search(query_terms, count + positives.len())
            .hits
            .into_iter()
            .map(|h| h.key)
            .filter(|k| !positives.contains(k))
            .take(count)
            .collect();
        MinedNegatives {
            shortfall: docs.len() < count,
            docs,
        }
    }
}
