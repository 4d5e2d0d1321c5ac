//! Weighted cross entropy and the loss configuration.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Lower clamp for probabilities inside `ln`.
pub const MIN_PROB: f64 = 1e-12;

/// Per-class weights for the detection loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: Vec<f64>,
}

impl LossWeights {
    pub fn uniform(classes: usize) -> Self {
        LossWeights {
            class: vec![1.0; classes],
        }
    }

    /// Inverse-frequency weights `w_c = n / (M · n_c)` for class counts
    /// `n_c`. Every class must occur.
    pub fn from_counts(counts: &[usize]) -> Result<Self, ModelError> {
        let n: usize = counts.iter().sum();
        let m = counts.len() as f64;
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(ModelError::MissingClass(c));
        }
        Ok(LossWeights {
            class: counts.iter().map(|&c| n as f64 / (m * c as f64)).collect(),
        })
    }
}

/// `−w_y · ln(max(p_y, 1e-12))`.
pub fn weighted_ce(p: &[f64], label: usize, weights: &LossWeights) -> f64 {
    -weights.class[label] * p[label].max(MIN_PROB).ln()
}

/// Mean weighted cross entropy over a batch of distributions.
pub fn batch_weighted_ce(ps: &[Vec<f64>], labels: &[usize], weights: &LossWeights) -> f64 {
    let total: f64 = ps
        .iter()
        .zip(labels)
        .map(|(p, &y)| weighted_ce(p, y, weights))
        .sum();
    total / ps.len() as f64
}

/// Relative weight of each head's loss in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub detection: f64,
    pub generation: f64,
    pub category: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            detection: 1.0,
            generation: 1.0,
            category: 1.0,
        }
    }
}

impl LossCoefficients {
    pub const ZERO: LossCoefficients = LossCoefficients {
        detection: 0.0,
        generation: 0.0,
        category: 0.0,
    };
}
