//! Sensor-aware temporal-spatial memory.
//!
//! Each sensor owns a pool of key-value feature entries split into a
//! working store (most recent frames) and a bounded long-term store.
//! Incoming features query the pool with scaled dot-product attention;
//! the attention mass each entry receives accumulates over its lifetime
//! and drives pruning when the long-term store overflows. Insertion is
//! gated by cosine similarity against long-term keys so near-duplicate
//! frames do not grow the pool.

mod backbone;
mod pool;
mod step;

pub use backbone::{Backbone, OracleBackbone, ToyLinearBackbone};
pub use pool::{
    attend_tokens, EntryRef, InsertStats, MemoryEntry, PoolConfig, PoolSet, SensorPool, Stage,
    StoreKind,
};
pub use step::{FrameRef, StepOutput, StreamEngine};

use crate::error::{Error, Result};

/// Flat grid of feature tokens, one per patch of the tokenized image.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TokenGrid {
    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self { rows, cols, dim, data: vec![0.0; rows * cols * dim] }
    }

    pub fn from_tokens(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::DimensionMismatch(format!(
                "token grid expects {} values, got {}",
                rows * cols * dim,
                data.len()
            )));
        }
        Ok(Self { rows, cols, dim, data })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn token_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-pixel confidence, parameterized as `1 + exp(raw)` so every value
/// is at least 1 and `log c` is never negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub conf: Vec<f64>,
}

impl ConfidenceMap {
    pub fn from_raw(width: usize, height: usize, raw: &[f64]) -> Self {
        assert_eq!(raw.len(), width * height);
        Self { width, height, conf: raw.iter().map(|r| 1.0 + r.exp()).collect() }
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        assert!(value >= 1.0, "confidence must be at least 1");
        Self { width, height, conf: vec![value; width * height] }
    }

    pub fn min(&self) -> f64 {
        self.conf.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let denom = (na * nb).sqrt();
    if denom < 1e-30 {
        0.0
    } else {
        dot / denom
    }
}
