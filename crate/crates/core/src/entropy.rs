//! Step-level entropy aggregation and batch min-max normalization.
//!
//! Normalization is stateless: each batch is pooled on its own (all steps of
//! all surviving trajectories form one pool) so the scale adapts to the
//! policy's current confidence level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntropyError {
    #[error("step has no token entropies")]
    EmptyStep,
    #[error("entropy batch is empty")]
    EmptyBatch,
}

/// Step entropy H_t: arithmetic mean of the per-sub-token entropies.
pub fn step_entropy(token_entropies: &[f64]) -> Result<f64, EntropyError> {
    if token_entropies.is_empty() {
        return Err(EntropyError::EmptyStep);
    }
    Ok(token_entropies.iter().sum::<f64>() / token_entropies.len() as f64)
}

/// Min-max scaling with an epsilon-guarded denominator:
/// (H - min) / (max - min + epsilon). Outputs lie in [0, 1).
pub fn minmax_normalize(entropies: &[f64], epsilon: f64) -> Result<Vec<f64>, EntropyError> {
    if entropies.is_empty() {
        return Err(EntropyError::EmptyBatch);
    }
    let min = entropies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = entropies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = max - min + epsilon;
    Ok(entropies.iter().map(|&h| (h - min) / denom).collect())
}

/// Batch entropy pool: raw step entropies, their extrema, and the normalized
/// values, in the canonical step order of the surviving trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyLedger {
    pub h_step: Vec<f64>,
    pub batch_min: f64,
    pub batch_max: f64,
    pub h_norm: Vec<f64>,
}

impl EntropyLedger {
    pub fn build(h_step: Vec<f64>, epsilon: f64) -> Result<Self, EntropyError> {
        let h_norm = minmax_normalize(&h_step, epsilon)?;
        let batch_min = h_step.iter().cloned().fold(f64::INFINITY, f64::min);
        let batch_max = h_step.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(EntropyLedger {
            h_step,
            batch_min,
            batch_max,
            h_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.h_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_step.is_empty()
    }
}
