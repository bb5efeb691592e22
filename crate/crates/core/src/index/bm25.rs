use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Error::InvalidConfig(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!("b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Non-negative idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn idf(df: u64, doc_count: u64) -> f64 {
    let df = df as f64;
    (1.0 + (doc_count as f64 - df + 0.5) / (df + 0.5)).ln()
}

/// The `k1 · (1 - b + b · dl / avgdl)` denominator term. Collections with no
/// tokens at all have no postings to score, so `avgdl = 0` maps to `k1`.
pub fn length_norm(dl: u64, avgdl: f64, params: Bm25Params) -> f64 {
    let ratio = if avgdl > 0.0 { dl as f64 / avgdl } else { 1.0 };
    params.k1 * (1.0 - params.b + params.b * ratio)
}

/// Saturated term weight given a precomputed idf and length norm. Every score
/// in the crate goes through this function so that the exhaustive and pruned
/// retrieval paths agree bit for bit.
#[inline]
pub fn saturate(idf: f64, tf: u32, norm: f64, k1: f64) -> f64 {
    let tf = tf as f64;
    idf * (tf * (k1 + 1.0)) / (tf + norm)
}

pub fn bm25_term_score(
    tf: u32,
    df: u64,
    dl: u64,
    avgdl: f64,
    doc_count: u64,
    params: Bm25Params,
) -> f64 {
    saturate(idf(df, doc_count), tf, length_norm(dl, avgdl, params), params.k1)
}
