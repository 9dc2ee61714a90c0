use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a probability vector is normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A normalized probability vector over the ordered options of one question.
///
/// Position `i` holds the probability of option number `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OptionDistribution(Vec<f64>);

impl OptionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 options, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights (e.g. response counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    /// Softmax of arbitrary real logits, stabilized by max subtraction.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::InvalidDistribution("all logits are -inf".into()));
        }
        if !max.is_finite() || logits.iter().any(|z| z.is_nan()) {
            return Err(Error::InvalidDistribution("logits must be finite or -inf".into()));
        }
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 2, "a question needs at least two options");
        Self(vec![1.0 / k as f64; k])
    }

    /// All mass on `option` (1-based).
    pub fn point_mass(k: usize, option: usize) -> Self {
        assert!(k >= 2 && (1..=k).contains(&option));
        let mut probs = vec![0.0; k];
        probs[option - 1] = 1.0;
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Probability of option number `option` (1-based).
    pub fn prob(&self, option: usize) -> f64 {
        self.0[option - 1]
    }

    pub fn cdf(&self) -> Vec<f64> {
        prefix_sums(&self.0)
    }

    /// Option number with the largest probability; ties go to the lowest option.
    pub fn mode(&self) -> usize {
        argmax_lowest(&self.0) + 1
    }
}

impl TryFrom<Vec<f64>> for OptionDistribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<OptionDistribution> for Vec<f64> {
    fn from(value: OptionDistribution) -> Self {
        value.0
    }
}

pub(crate) fn prefix_sums(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Index of the maximum; the first index wins on ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
