use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::ivf::{IvfIndex, IvfParams};
use super::{dot, Corpus, DocEncoder, DocKey, Document, Hit, SearchMode, SearchResult};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) struct Slot {
    pub corpus: Corpus,
    pub positions: HashMap<String, usize>,
    /// `len × dim`, row `i` embeds `corpus.documents()[i]`.
    pub embeddings: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Approx {
    index: IvfIndex,
    /// Global row → (slot, row within slot).
    rows: Vec<(usize, usize)>,
}

/// Corpora sharing one embedding space and one search index.
///
/// Mutations take `&mut self`, so readers always observe a complete state.
#[derive(Clone, Debug)]
pub struct MemoryMixture {
    dim: usize,
    slots: IndexMap<String, Slot>,
    version: u64,
    ivf_params: IvfParams,
    approx: OnceLock<Approx>,
}

/// Result of sampling hard negatives from a retrieved pool.
#[derive(Clone, Debug, PartialEq)]
pub struct MinedNegatives {
    pub docs: Vec<DocKey>,
    /// Fewer than the requested count survived exclusion.
    pub shortfall: bool,
}

pub(crate) fn encode_corpus(corpus: &Corpus, encoder: &dyn DocEncoder) -> Result<Vec<f64>> {
    let dim = encoder.dim();
    let rows: Vec<Vec<f64>> = corpus
        .documents()
        .par_iter()
        .map(|d| encoder.encode(d))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::shape("document encoder", format!("returned {} values, expected {dim}", r.len())));
        }
        out.extend(r);
    }
    Ok(out)
}

impl MemoryMixture {
    pub fn new(dim: usize) -> Self {
        Self::with_ivf(dim, IvfParams::default())
    }

    pub fn with_ivf(dim: usize, ivf_params: IvfParams) -> Self {
        MemoryMixture {
            dim,
            slots: IndexMap::new(),
            version: 0,
            ivf_params,
            approx: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bumped by every [`refresh`](Self::refresh).
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub fn ivf_params(&self) -> &IvfParams {
        &self.ivf_params
    }

    pub fn corpus_ids(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn corpus(&self, corpus_id: &str) -> Option<&Corpus> {
        self.slots.get(corpus_id).map(|s| &s.corpus)
    }

    pub fn contains_corpus(&self, corpus_id: &str) -> bool {
        self.slots.contains_key(corpus_id)
    }

    /// Total document count.
    pub fn len(&self) -> usize {
        self.slots.values().map(|s| s.corpus.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn document(&self, key: &DocKey) -> Option<&Document> {
        let slot = self.slots.get(&key.corpus_id)?;
        slot.positions.get(&key.doc_id).map(|&i| &slot.corpus.documents()[i])
    }

    pub fn embedding(&self, key: &DocKey) -> Option<&[f64]> {
        let slot = self.slots.get(&key.corpus_id)?;
        let i = *slot.positions.get(&key.doc_id)?;
        Some(&slot.embeddings[i * self.dim..(i + 1) * self.dim])
    }

    pub(crate) fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.values()
    }

    /// Encodes `corpus` with `encoder` and appends it.
    pub fn add_corpus(&mut self, corpus: Corpus, encoder: &dyn DocEncoder) -> Result<()> {
        if self.slots.contains_key(corpus.id()) {
            return Err(Error::DuplicateCorpus(corpus.id().to_string()));
        }
        if encoder.dim() != self.dim {
            return Err(Error::shape("add_corpus", format!("encoder dim {} vs index dim {}", encoder.dim(), self.dim)));
        }
        let embeddings = encode_corpus(&corpus, encoder)?;
        self.add_corpus_with_embeddings(corpus, embeddings)
    }

    /// Appends `corpus` with precomputed row-major embeddings.
    pub fn add_corpus_with_embeddings(&mut self, corpus: Corpus, embeddings: Vec<f64>) -> Result<()> {
        if self.slots.contains_key(corpus.id()) {
            return Err(Error::DuplicateCorpus(corpus.id().to_string()));
        }
        if embeddings.len() != corpus.len() * self.dim {
            return Err(Error::shape(
                "add_corpus",
                format!("{} values for {} documents of dim {}", embeddings.len(), corpus.len(), self.dim),
            ));
        }
        let positions = corpus
            .documents()
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        self.slots.insert(
            corpus.id().to_string(),
            Slot {
                corpus,
                positions,
                embeddings,
            },
        );
        self.approx = OnceLock::new();
        Ok(())
    }

    /// Removes a corpus; remaining corpora keep their order and rows.
    pub fn remove_corpus(&mut self, corpus_id: &str) -> Result<Corpus> {
        let slot = self
            .slots
            .shift_remove(corpus_id)
            .ok_or_else(|| Error::UnknownCorpus(corpus_id.to_string()))?;
        self.approx = OnceLock::new();
        Ok(slot.corpus)
    }

    /// Replaces `remove` by `add`, encoding the newcomer with `encoder`.
    pub fn swap_corpus(&mut self, remove: &str, add: Corpus, encoder: &dyn DocEncoder) -> Result<Corpus> {
        if !self.slots.contains_key(remove) {
            return Err(Error::UnknownCorpus(remove.to_string()));
        }
        if add.id() != remove && self.slots.contains_key(add.id()) {
            return Err(Error::DuplicateCorpus(add.id().to_string()));
        }
        let embeddings = encode_corpus(&add, encoder)?;
        let old = self.remove_corpus(remove)?;
        self.add_corpus_with_embeddings(add, embeddings)?;
        Ok(old)
    }

    /// Re-embeds every document and bumps the version stamp.
    pub fn refresh(&mut self, encoder: &dyn DocEncoder) -> Result<()> {
        if encoder.dim() != self.dim {
            return Err(Error::shape("refresh", format!("encoder dim {} vs index dim {}", encoder.dim(), self.dim)));
        }
        let fresh: Vec<Vec<f64>> = self
            .slots
            .values()
            .map(|s| encode_corpus(&s.corpus, encoder))
            .collect::<Result<_>>()?;
        for (slot, emb) in self.slots.values_mut().zip(fresh) {
            slot.embeddings = emb;
        }
        self.version += 1;
        self.approx = OnceLock::new();
        Ok(())
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::shape("search", format!("query dim {} vs index dim {}", query.len(), self.dim)));
        }
        Ok(())
    }

    fn hit(&self, slot: usize, row: usize, score: f64) -> Hit {
        let (_, s) = self.slots.get_index(slot).expect("slot index");
        Hit {
            key: s.corpus.documents()[row].key(),
            score,
        }
    }

    /// Keeps the best `k` of `(score, slot, row)` candidates, ranked.
    fn top_k(&self, mut cands: Vec<(f64, usize, usize)>, k: usize) -> SearchResult {
        let key = |slot: usize, row: usize| {
            let s = &self.slots[slot];
            (s.corpus.id(), s.corpus.documents()[row].doc_id.as_str())
        };
        let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.total_cmp(&a.0).then_with(|| key(a.1, a.2).cmp(&key(b.1, b.2)))
        };
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, cmp);
            cands.truncate(k);
        }
        cands.sort_by(cmp);
        SearchResult {
            hits: cands.into_iter().map(|(s, slot, row)| self.hit(slot, row, s)).collect(),
        }
    }

    fn scan_slot(&self, slot: usize, query: &[f64], out: &mut Vec<(f64, usize, usize)>) {
        let s = &self.slots[slot];
        out.extend(
            s.embeddings
                .chunks_exact(self.dim)
                .enumerate()
                .map(|(row, e)| (dot(query, e), slot, row)),
        );
    }

    fn approx_index(&self) -> &Approx {
        self.approx.get_or_init(|| {
            let mut rows = Vec::with_capacity(self.len());
            let mut data = Vec::with_capacity(self.len() * self.dim);
            for (si, s) in self.slots.values().enumerate() {
                rows.extend((0..s.corpus.len()).map(|r| (si, r)));
                data.extend_from_slice(&s.embeddings);
            }
            Approx {
                index: IvfIndex::build(&data, self.dim, &self.ivf_params),
                rows,
            }
        })
    }

    /// Builds the approximate index now instead of on first use.
    pub fn prepare_approx(&self) {
        if !self.is_empty() {
            self.approx_index();
        }
    }

    /// Top-`k` documents by dot product with `query`.
    pub fn search(&self, query: &[f64], k: usize, mode: SearchMode) -> Result<SearchResult> {
        self.check_query(query, k)?;
        if self.is_empty() {
            return Ok(SearchResult::default());
        }
        let mut cands = Vec::new();
        match mode {
            SearchMode::Exact => {
                cands.reserve(self.len());
                for slot in 0..self.slots.len() {
                    self.scan_slot(slot, query, &mut cands);
                }
            }
            SearchMode::Approx => {
                let approx = self.approx_index();
                for g in approx.index.candidates(query) {
                    let (slot, row) = approx.rows[g];
                    let e = &self.slots[slot].embeddings[row * self.dim..(row + 1) * self.dim];
                    cands.push((dot(query, e), slot, row));
                }
            }
        }
        Ok(self.top_k(cands, k))
    }

    /// Searches many queries, fanning out over the worker pool.
    pub fn search_batch(&self, queries: &[Vec<f64>], k: usize, mode: SearchMode) -> Result<Vec<SearchResult>> {
        queries.par_iter().map(|q| self.search(q, k, mode)).collect()
    }

    /// Exact top-`k` restricted to one corpus.
    pub fn search_corpus(&self, corpus_id: &str, query: &[f64], k: usize) -> Result<SearchResult> {
        self.check_query(query, k)?;
        let slot = self
            .slots
            .get_index_of(corpus_id)
            .ok_or_else(|| Error::UnknownCorpus(corpus_id.to_string()))?;
        let mut cands = Vec::new();
        self.scan_slot(slot, query, &mut cands);
        Ok(self.top_k(cands, k))
    }

    /// Samples `count` documents uniformly from the top-`depth` hits that are
    /// not in `exclude`. Sampled documents keep their rank order.
    pub fn mine_negatives<R: Rng>(
        &self,
        query: &[f64],
        depth: usize,
        exclude: &HashSet<DocKey>,
        count: usize,
        mode: SearchMode,
        rng: &mut R,
    ) -> Result<MinedNegatives> {
        if depth < count {
            return Err(Error::contract(format!("mining depth {depth} below negative count {count}")));
        }
        let pool: Vec<DocKey> = self
            .search(query, depth.max(1), mode)?
            .hits
            .into_iter()
            .map(|h| h.key)
            .filter(|k| !exclude.contains(k))
            .collect();
        Ok(sample_pool(pool, count, rng))
    }
}

/// Uniform sample without replacement, reported in pool order.
pub(crate) fn sample_pool<R: Rng>(pool: Vec<DocKey>, count: usize, rng: &mut R) -> MinedNegatives {
    if pool.len() <= count {
        let shortfall = pool.len() < count;
        return MinedNegatives { docs: pool, shortfall };
    }
    let mut picked = sample(rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    let mut pool: Vec<Option<DocKey>> = pool.into_iter().map(Some).collect();
    MinedNegatives {
        docs: picked.into_iter().map(|i| pool[i].take().expect("distinct indices")).collect(),
        shortfall: false,
    }
}
