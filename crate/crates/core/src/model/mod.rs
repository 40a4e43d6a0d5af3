//! Toy encoder-decoder text encoder.
//!
//! A text is encoded by running the encoder over `[CLS] tokens...` and then a
//! decoder whose single input position is `[CLS]`; the decoder output at that
//! position is the text embedding. The fused variant encodes the query and
//! each augmentation document as separate segments (each with positions
//! restarting at zero) and lets the one-position decoder cross-attend over
//! their concatenation. Cross-attention probabilities are recorded per layer
//! and head so callers can see how much mass each segment received.

mod config;
mod record;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::ModelConfig;
pub use record::{CrossAttentionRecord, EncodedSegment, SegmentSource, SegmentSpan};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamSet, ParamSnapshot, Tape, Tensor, Var};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
/// Ids below this are reserved markers.
pub const NUM_RESERVED: usize = 4;

/// Which length limit applies to a text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentRole {
    Query,
    Document,
}

#[derive(Clone, Debug)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Debug)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct FfIds {
    w_in: ParamId,
    w_out: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn_norm: NormIds,
    attn: AttnIds,
    ff_norm: NormIds,
    ff: FfIds,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_norm: NormIds,
    self_attn: AttnIds,
    cross_norm: NormIds,
    cross_attn: AttnIds,
    ff_norm: NormIds,
    ff: FfIds,
}

#[derive(Clone, Debug)]
struct Layout {
    token_embedding: ParamId,
    position_embedding: ParamId,
    decoder_position: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: NormIds,
    decoder: Vec<DecoderLayer>,
    decoder_norm: NormIds,
}

/// Weights plus layout of one encoder-decoder instance.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

/// Tape handles for the fused forward pass.
pub struct FusedVars {
    /// `[1 × model_dim]` fused query embedding.
    pub embedding: Var,
    /// One cross-attention node per decoder layer.
    pub cross_attention: Vec<Var>,
    pub spans: Vec<SegmentSpan>,
}

/// Serialized form of a [`Model`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: ModelConfig,
    pub params: ParamSnapshot,
}

struct Builder<'r, R: Rng> {
    params: ParamSet,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) -> ParamId {
        self.normal_with(name, shape, std, true)
    }

    fn normal_with(&mut self, name: String, shape: Vec<usize>, std: f64, trainable: bool) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        let t = Tensor::new(shape, data).expect("init shape");
        self.params.push(name, if trainable { t.with_grad() } else { t })
    }

    fn filled(&mut self, name: String, shape: Vec<usize>, value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let t = Tensor::new(shape, vec![value; n]).expect("init shape").with_grad();
        self.params.push(name, t)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.filled(format!("{prefix}.gain"), vec![1, d], 1.0),
            bias: self.filled(format!("{prefix}.bias"), vec![1, d], 0.0),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIds {
        let std = 1.0 / (d as f64).sqrt();
        AttnIds {
            wq: self.normal(format!("{prefix}.wq"), vec![d, d], std),
            wk: self.normal(format!("{prefix}.wk"), vec![d, d], std),
            wv: self.normal(format!("{prefix}.wv"), vec![d, d], std),
            wo: self.normal(format!("{prefix}.wo"), vec![d, d], 0.5 * std),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, f: usize) -> FfIds {
        FfIds {
            w_in: self.normal(format!("{prefix}.w_in"), vec![d, f], 1.0 / (d as f64).sqrt()),
            w_out: self.normal(format!("{prefix}.w_out"), vec![f, d], 0.5 / (f as f64).sqrt()),
        }
    }
}

impl Model {
    /// Randomly initialized model.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut b = Builder {
            params: ParamSet::default(),
            rng,
        };
        let token_embedding = b.normal_with(
            "token_embedding".into(),
            vec![config.vocab_size, d],
            1.0,
            !config.freeze_token_embeddings,
        );
        let position_embedding = b.normal("position_embedding".into(), vec![config.max_positions(), d], 0.1);
        let decoder_position = b.normal("decoder_position".into(), vec![1, d], 0.1);
        let encoder = (0..config.num_layers)
            .map(|l| EncoderLayer {
                attn_norm: b.norm(&format!("enc.{l}.attn_norm"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ff_norm: b.norm(&format!("enc.{l}.ff_norm"), d),
                ff: b.ff(&format!("enc.{l}.ff"), d, config.feedforward_dim),
            })
            .collect();
        let encoder_norm = b.norm("enc.final_norm", d);
        let decoder = (0..config.num_layers)
            .map(|l| DecoderLayer {
                self_norm: b.norm(&format!("dec.{l}.self_norm"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                cross_norm: b.norm(&format!("dec.{l}.cross_norm"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
                ff_norm: b.norm(&format!("dec.{l}.ff_norm"), d),
                ff: b.ff(&format!("dec.{l}.ff"), d, config.feedforward_dim),
            })
            .collect();
        let decoder_norm = b.norm("dec.final_norm", d);
        Ok(Model {
            config,
            params: b.params,
            layout: Layout {
                token_embedding,
                position_embedding,
                decoder_position,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
            },
        })
    }

    /// Rebuilds a model from saved weights; names and shapes must match the
    /// layout implied by `file.config`.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        // Same construction order gives the same ids; only values are replaced.
        let mut model = Model::new(file.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let loaded = ParamSet::from_snapshot(file.params)?;
        if loaded.names() != model.params.names() {
            return Err(Error::contract("saved parameter names do not match the model layout"));
        }
        for (dst, src) in model.params.tensors_mut().iter_mut().zip(loaded.tensors()) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("model load", format!("{:?} vs {:?}", dst.shape(), src.shape())));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            config: self.config.clone(),
            params: self.params.to_snapshot(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Moves token rows towards `rows`: row `i` becomes
    /// `(1 - weight) * row + weight * rows[i]`. `None` entries are left alone.
    pub fn blend_token_embeddings(&mut self, rows: &[Option<Vec<f64>>], weight: f64) -> Result<()> {
        let d = self.config.model_dim;
        if rows.len() != self.config.vocab_size {
            return Err(Error::contract(format!(
                "{} rows for a vocabulary of {}",
                rows.len(),
                self.config.vocab_size
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::config("weight", format!("{weight} is outside [0, 1]")));
        }
        let table = self.params.get_mut(self.layout.token_embedding).data_mut();
        for (i, row) in rows.iter().enumerate() {
            let Some(row) = row else { continue };
            if row.len() != d {
                return Err(Error::contract(format!("row {i} has width {}, expected {d}", row.len())));
            }
            for (t, &r) in table[i * d..(i + 1) * d].iter_mut().zip(row) {
                *t = (1.0 - weight) * *t + weight * r;
            }
        }
        Ok(())
    }

    fn max_len(&self, role: SegmentRole) -> usize {
        match role {
            SegmentRole::Query => self.config.max_query_len,
            SegmentRole::Document => self.config.max_doc_len,
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Validates ids and truncates to the role's maximum length.
    pub fn prepare<'i>(&self, ids: &'i [u32], role: SegmentRole) -> Result<&'i [u32]> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("token ids"));
        }
        self.check_ids(ids)?;
        Ok(&ids[..ids.len().min(self.max_len(role))])
    }

    /// `[SEP]` followed by the document's content tokens (a leading `[CLS]`
    /// is dropped), truncated to the document length limit.
    pub fn augmentation_segment(&self, doc_ids: &[u32]) -> Result<Vec<u32>> {
        self.check_ids(doc_ids)?;
        let content = match doc_ids.first() {
            Some(&CLS_ID) => &doc_ids[1..],
            _ => doc_ids,
        };
        let mut seg = Vec::with_capacity(content.len() + 1);
        seg.push(SEP_ID);
        seg.extend_from_slice(content);
        seg.truncate(self.config.max_doc_len);
        Ok(seg)
    }

    /// Registers every parameter on `tape`, indexed by parameter id.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId(i), t))
            .collect()
    }

    fn linear(tape: &mut Tape<'_>, vars: &[Var], x: Var, w: ParamId) -> Result<Var> {
        tape.matmul(x, vars[w.0])
    }

    fn norm(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var, n: &NormIds) -> Result<Var> {
        tape.layer_norm(x, vars[n.gain.0], vars[n.bias.0], self.config.layer_norm_eps)
    }

    fn feed_forward(tape: &mut Tape<'_>, vars: &[Var], x: Var, ff: &FfIds) -> Result<Var> {
        let h = Self::linear(tape, vars, x, ff.w_in)?;
        let h = tape.gelu(h);
        Self::linear(tape, vars, h, ff.w_out)
    }

    fn attend(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var, ctx: Var, a: &AttnIds) -> Result<(Var, Var)> {
        let q = Self::linear(tape, vars, x, a.wq)?;
        let k = Self::linear(tape, vars, ctx, a.wk)?;
        let v = Self::linear(tape, vars, ctx, a.wv)?;
        let att = tape.attention(q, k, v, self.config.num_heads)?;
        Ok((Self::linear(tape, vars, att, a.wo)?, att))
    }

    /// Encoder over already prepared ids; returns `[len × model_dim]`.
    pub fn encode_on(&self, tape: &mut Tape<'_>, vars: &[Var], ids: &[u32]) -> Result<Var> {
        if ids.len() > self.config.max_positions() {
            return Err(Error::contract("segment longer than the position table"));
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.gather(vars[self.layout.token_embedding.0], &idx)?;
        let pos = tape.gather(vars[self.layout.position_embedding.0], &positions)?;
        let mut x = tape.add(tok, pos)?;
        for layer in &self.layout.encoder {
            let h = self.norm(tape, vars, x, &layer.attn_norm)?;
            let (a, _) = self.attend(tape, vars, h, h, &layer.attn)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, vars, x, &layer.ff_norm)?;
            let f = Self::feed_forward(tape, vars, h, &layer.ff)?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, vars, x, &self.layout.encoder_norm)
    }

    /// Single-position decoder over encoder outputs. Returns the `[1 × d]`
    /// output and the cross-attention node of every layer.
    pub fn decode_on(&self, tape: &mut Tape<'_>, vars: &[Var], memory: Var) -> Result<(Var, Vec<Var>)> {
        let cls = tape.gather(vars[self.layout.token_embedding.0], &[CLS_ID as usize])?;
        let mut y = tape.add(cls, vars[self.layout.decoder_position.0])?;
        let mut cross = Vec::with_capacity(self.layout.decoder.len());
        for layer in &self.layout.decoder {
            let h = self.norm(tape, vars, y, &layer.self_norm)?;
            let (a, _) = self.attend(tape, vars, h, h, &layer.self_attn)?;
            y = tape.add(y, a)?;
            let h = self.norm(tape, vars, y, &layer.cross_norm)?;
            let (a, att) = self.attend(tape, vars, h, memory, &layer.cross_attn)?;
            cross.push(att);
            y = tape.add(y, a)?;
            let h = self.norm(tape, vars, y, &layer.ff_norm)?;
            let f = Self::feed_forward(tape, vars, h, &layer.ff)?;
            y = tape.add(y, f)?;
        }
        Ok((self.norm(tape, vars, y, &self.layout.decoder_norm)?, cross))
    }

    /// Plain text embedding `Dec(Enc(x))` as a `[1 × d]` node.
    pub fn embed_text_on(&self, tape: &mut Tape<'_>, vars: &[Var], ids: &[u32], role: SegmentRole) -> Result<Var> {
        let ids = self.prepare(ids, role)?;
        let enc = self.encode_on(tape, vars, ids)?;
        Ok(self.decode_on(tape, vars, enc)?.0)
    }

    /// Fused query embedding over the query and up to `k_default`
    /// augmentation documents, each encoded on its own.
    pub fn embed_fused_on(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        query: &[u32],
        aug_docs: &[Vec<u32>],
    ) -> Result<FusedVars> {
        if aug_docs.len() > self.config.k_default {
            return Err(Error::contract(format!(
                "{} augmentation documents exceed K = {}",
                aug_docs.len(),
                self.config.k_default
            )));
        }
        let query = self.prepare(query, SegmentRole::Query)?;
        let mut parts = Vec::with_capacity(aug_docs.len() + 1);
        let mut spans = Vec::with_capacity(aug_docs.len() + 1);
        parts.push(self.encode_on(tape, vars, query)?);
        spans.push(SegmentSpan {
            source: SegmentSource::Query,
            start: 0,
            len: query.len(),
        });
        let mut cursor = query.len();
        for (i, doc) in aug_docs.iter().enumerate() {
            let seg = self.augmentation_segment(doc)?;
            parts.push(self.encode_on(tape, vars, &seg)?);
            spans.push(SegmentSpan {
                source: SegmentSource::Augmentation(i),
                start: cursor,
                len: seg.len(),
            });
            cursor += seg.len();
        }
        let memory = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)?
        };
        let (embedding, cross_attention) = self.decode_on(tape, vars, memory)?;
        Ok(FusedVars {
            embedding,
            cross_attention,
            spans,
        })
    }

    /// Encoder output for one text.
    pub fn encode(&self, ids: &[u32], role: SegmentRole) -> Result<EncodedSegment> {
        let ids = self.prepare(ids, role)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.encode_on(&mut tape, &vars, ids)?;
        let source = match role {
            SegmentRole::Query => SegmentSource::Query,
            SegmentRole::Document => SegmentSource::Document,
        };
        Ok(EncodedSegment {
            source,
            token_ids: ids.to_vec(),
            output: Tensor::new(vec![ids.len(), self.config.model_dim], tape.value(out).to_vec())?,
        })
    }

    /// Plain text embedding, used for documents and non-augmented queries.
    pub fn embed_text(&self, ids: &[u32], role: SegmentRole) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.embed_text_on(&mut tape, &vars, ids, role)?;
        Ok(tape.value(out).to_vec())
    }

    /// Fused query embedding plus the decoder's cross-attention record.
    pub fn embed_query_fused(&self, query: &[u32], aug_docs: &[Vec<u32>]) -> Result<(Vec<f64>, CrossAttentionRecord)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let fused = self.embed_fused_on(&mut tape, &vars, query, aug_docs)?;
        let record = cross_attention_record(&tape, &fused, self.config.num_heads)?;
        Ok((tape.value(fused.embedding).to_vec(), record))
    }
}

/// Collects the decoder-[CLS] attention rows of a fused pass.
pub fn cross_attention_record(tape: &Tape<'_>, fused: &FusedVars, num_heads: usize) -> Result<CrossAttentionRecord> {
    let mut rows = Vec::with_capacity(fused.cross_attention.len() * num_heads);
    for &att in &fused.cross_attention {
        let (probs, heads) = tape
            .attention_probs(att)
            .ok_or_else(|| Error::contract("cross-attention node carries no probabilities"))?;
        // One decoder position, so each head contributes exactly one row.
        let total = probs.len() / heads;
        rows.extend(probs.chunks(total).map(<[f64]>::to_vec));
    }
    CrossAttentionRecord::new(fused.cross_attention.len(), num_heads, rows, fused.spans.clone())
}

#[cfg(test)]
mod tests;
