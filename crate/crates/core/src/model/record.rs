use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Where an encoded segment came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentSource {
    Query,
    Document,
    /// Position in the augmentation list handed to the fused encoder.
    Augmentation(usize),
}

/// Encoder output for one segment, position 0 being its leading marker.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSegment {
    pub source: SegmentSource,
    pub token_ids: Vec<u32>,
    /// `[len × model_dim]`.
    pub output: Tensor,
}

impl EncodedSegment {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Half-open range of concatenated encoder positions owned by one segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub source: SegmentSource,
    pub start: usize,
    pub len: usize,
}

impl SegmentSpan {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Decoder-[CLS] cross-attention over the fused encoder positions: one
/// probability row per (layer, head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossAttentionRecord {
    num_layers: usize,
    num_heads: usize,
    total_positions: usize,
    /// Layer-major: row `layer * num_heads + head`.
    rows: Vec<Vec<f64>>,
    spans: Vec<SegmentSpan>,
}

impl CrossAttentionRecord {
    /// Checks that the spans tile `[0, total)` in order and that every row
    /// covers all positions with nonnegative weights.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        rows: Vec<Vec<f64>>,
        spans: Vec<SegmentSpan>,
    ) -> Result<Self> {
        let total = spans.last().map_or(0, SegmentSpan::end);
        let mut cursor = 0;
        for s in &spans {
            if s.start != cursor || s.len == 0 {
                return Err(Error::contract(format!(
                    "segment spans must tile positions without gaps; got {s:?} at {cursor}"
                )));
            }
            cursor = s.end();
        }
        if rows.len() != num_layers * num_heads {
            return Err(Error::contract(format!(
                "expected {} attention rows, got {}",
                num_layers * num_heads,
                rows.len()
            )));
        }
        for row in &rows {
            if row.len() != total {
                return Err(Error::contract(format!("attention row of {} for {total} positions", row.len())));
            }
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::contract("attention weights must be nonnegative"));
            }
        }
        Ok(CrossAttentionRecord {
            num_layers,
            num_heads,
            total_positions: total,
            rows,
            spans,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn total_positions(&self) -> usize {
        self.total_positions
    }

    pub fn row(&self, layer: usize, head: usize) -> &[f64] {
        &self.rows[layer * self.num_heads + head]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn spans(&self) -> &[SegmentSpan] {
        &self.spans
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
