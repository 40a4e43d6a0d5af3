use crate::error::{Error, Result};
use crate::evalkit::{Query, Retriever};
use crate::memory::{Corpus, DocEncoder, DocKey, Document, MemoryMixture, SearchMode};
use crate::model::{CrossAttentionRecord, Model, SegmentRole};
use crate::workbench::Vocabulary;

/// Tokenizes with the model's length limits and embeds with `g`.
#[derive(Clone, Copy)]
pub struct TextEncoder<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
}

impl<'a> TextEncoder<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocabulary) -> Self {
        TextEncoder { model, vocab }
    }

    pub fn query_tokens(&self, text: &str) -> Vec<u32> {
        self.vocab.tokenize(text, self.model.config().max_query_len)
    }

    pub fn doc_tokens(&self, doc: &Document) -> Vec<u32> {
        self.vocab.tokenize(&doc.full_text(), self.model.config().max_doc_len)
    }

    pub fn embed_query(&self, text: &str) -> Result<Vec<f64>> {
        self.model.embed_text(&self.query_tokens(text), SegmentRole::Query)
    }
}

impl DocEncoder for TextEncoder<'_> {
    fn dim(&self) -> usize {
        self.model.config().model_dim
    }

    fn encode(&self, doc: &Document) -> Result<Vec<f64>> {
        self.model.embed_text(&self.doc_tokens(doc), SegmentRole::Document)
    }
}

/// Builds one index over `corpora`, in order.
pub fn build_index(corpora: impl IntoIterator<Item = Corpus>, encoder: &dyn DocEncoder) -> Result<MemoryMixture> {
    let mut m = MemoryMixture::new(encoder.dim());
    for c in corpora {
        m.add_corpus(c, encoder)?;
    }
    Ok(m)
}

/// Tokens of a document stored in `mixture`.
pub fn stored_tokens(encoder: &TextEncoder<'_>, mixture: &MemoryMixture, key: &DocKey) -> Result<Vec<u32>> {
    let doc = mixture
        .document(key)
        .ok_or_else(|| Error::contract(format!("document {key} is not in the index")))?;
    Ok(encoder.doc_tokens(doc))
}

/// Augments a query from `memory` with `aug`, fuses with `end` and ranks
/// the documents of `target_corpus` inside `target`.
pub struct MomaRetriever<'a> {
    pub end: &'a Model,
    pub aug: &'a Model,
    pub vocab: &'a Vocabulary,
    /// Embedded with `aug`.
    pub memory: &'a MemoryMixture,
    /// Embedded with `end`.
    pub target: &'a MemoryMixture,
    pub target_corpus: String,
    /// Augmentation documents per query; 0 disables augmentation.
    pub k: usize,
    pub mode: SearchMode,
}

/// Fused query embedding with the documents that produced it.
pub struct FusedQuery {
    pub embedding: Vec<f64>,
    pub record: CrossAttentionRecord,
    pub augmentation: Vec<DocKey>,
}

impl MomaRetriever<'_> {
    pub fn augmentation(&self, text: &str) -> Result<Vec<DocKey>> {
        if self.k == 0 || self.memory.is_empty() {
            return Ok(Vec::new());
        }
        let q = TextEncoder::new(self.aug, self.vocab).embed_query(text)?;
        Ok(self.memory.search(&q, self.k, self.mode)?.hits.into_iter().map(|h| h.key).collect())
    }

    pub fn fused_query(&self, text: &str) -> Result<FusedQuery> {
        let enc = TextEncoder::new(self.end, self.vocab);
        let augmentation = self.augmentation(text)?;
        let docs: Vec<Vec<u32>> = augmentation
            .iter()
            .map(|k| stored_tokens(&enc, self.memory, k))
            .collect::<Result<_>>()?;
        let (embedding, record) = self.end.embed_query_fused(&enc.query_tokens(text), &docs)?;
        Ok(FusedQuery {
            embedding,
            record,
            augmentation,
        })
    }
}

impl Retriever for MomaRetriever<'_> {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>> {
        let q = self.fused_query(&query.text)?.embedding;
        Ok(self
            .target
            .search_corpus(&self.target_corpus, &q, k)?
            .hits
            .into_iter()
            .map(|h| (h.key.doc_id, h.score))
            .collect())
    }
}
