//! Frozen zero-shot scoring against the classifier bank.

use crate::error::{Error, Result};
use crate::features::{ClassifierBank, FeatureVector};

/// Temperature of the MCM softmax. Always positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: Temperature = Temperature(0.01);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::InvalidConfig(format!("temperature {tau} must be > 0")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::DEFAULT
    }
}

/// Cosine similarity of one feature against every prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector(Vec<f64>);

impl SimilarityVector {
    pub fn new(values: Vec<f64>) -> Self {
        SimilarityVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn cosine_similarities(f: &FeatureVector, bank: &ClassifierBank) -> Result<SimilarityVector> {
    if f.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            actual: f.dim(),
        });
    }
    let fnorm = f.norm();
    let sims = bank
        .prototypes()
        .iter()
        .map(|p| {
            let denom = fnorm * p.norm();
            if denom == 0.0 {
                0.0
            } else {
                f.dot(p.as_slice()) / denom
            }
        })
        .collect();
    Ok(SimilarityVector(sims))
}

/// Softmax of `logits / tau`, computed with max-subtraction.
pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Maximum softmax probability of `sims / tau`.
///
/// With the max subtracted the largest term is `exp(0) = 1`, so the maximum
/// probability is `1 / sum_j exp((s_j - s_max) / tau)`.
pub fn mcm_score(sims: &SimilarityVector, tau: Temperature) -> f64 {
    let s = sims.as_slice();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = s.iter().map(|&v| ((v - max) / tau.get()).exp()).sum();
    1.0 / total
}

/// Index of the largest similarity; the lowest index wins ties.
pub fn classify(sims: &SimilarityVector) -> usize {
    let mut best = 0;
    for (k, &v) in sims.as_slice().iter().enumerate().skip(1) {
        if v > sims.0[best] {
            best = k;
        }
    }
    best
}
