//! Probability vectors, label targets, softmax, and cross-entropy.
//!
//! The loss convention throughout the crate is the non-negative
//! cross-entropy `-Σ_j p_j log p̂_j`. Attacks *maximize* this loss inside a
//! threat model; training minimizes its expectation. The uniform target
//! `1/K` is the loss minimizer exactly under this sign convention, which is
//! what makes "enforce low confidence around out-distribution points"
//! expressible as loss maximization toward uniform.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities below this floor are clamped inside logarithms so saturated
/// softmax outputs keep losses finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// A probability vector must sum to 1 within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A distribution over `K` classes: non-negative entries summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates non-negativity and normalization before wrapping.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(format!(
                "probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|&&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!(
                "probability entries must be non-negative, got {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "probabilities must sum to 1 within {PROB_SUM_TOL}, got {sum}"
            )));
        }
        Ok(ProbabilityVector(probs))
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest probability.
    pub fn max_confidence(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The target distribution of a loss term: a one-hot class label or the
/// uniform distribution over all `K` classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelTarget {
    OneHot { class: usize, classes: usize },
    Uniform { classes: usize },
}

impl LabelTarget {
    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "label target needs at least 2 classes, got {classes}"
            )));
        }
        if class >= classes {
            return Err(Error::invalid(format!(
                "one-hot class {class} out of range for {classes} classes"
            )));
        }
        Ok(LabelTarget::OneHot { class, classes })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "label target needs at least 2 classes, got {classes}"
            )));
        }
        Ok(LabelTarget::Uniform { classes })
    }

    pub fn classes(&self) -> usize {
        match *self {
            LabelTarget::OneHot { classes, .. } | LabelTarget::Uniform { classes } => classes,
        }
    }

    /// Materializes the target as an explicit distribution: `e_y` or `1/K`.
    pub fn materialize(&self) -> ProbabilityVector {
        match *self {
            LabelTarget::OneHot { class, classes } => {
                let mut p = vec![0.0; classes];
                p[class] = 1.0;
                ProbabilityVector(p)
            }
            LabelTarget::Uniform { classes } => {
                ProbabilityVector(vec![1.0 / classes as f64; classes])
            }
        }
    }
}

/// Softmax with temperature: `p̂_s = exp(f_s/T) / Σ_j exp(f_j/T)`.
///
/// The maximum logit is subtracted before exponentiation, so no overflow
/// occurs for |logits| up to 1e4. Temperature must be positive.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbabilityVector> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&f| ((f - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbabilityVector(exps.into_iter().map(|e| e / sum).collect()))
}

/// Cross-entropy `-Σ_j p_j log p̂_j` of `predicted` against `target`.
///
/// Logarithms are clamped at `log(LOG_CLAMP)`, so the result is finite even
/// when the prediction saturates. Non-negative for any valid inputs.
pub fn cross_entropy(target: &LabelTarget, predicted: &ProbabilityVector) -> Result<f64> {
    if target.classes() != predicted.classes() {
        return Err(Error::shape(format!(
            "cross_entropy: target has {} classes, prediction has {}",
            target.classes(),
            predicted.classes()
        )));
    }
    let loss = match *target {
        LabelTarget::OneHot { class, .. } => -predicted.0[class].max(LOG_CLAMP).ln(),
        LabelTarget::Uniform { classes } => {
            let w = 1.0 / classes as f64;
            -predicted
                .0
                .iter()
                .map(|&q| w * q.max(LOG_CLAMP).ln())
                .sum::<f64>()
        }
    };
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_high_temperature_is_uniform() {
        let p = softmax(&[3.0, 1.0, 0.0], 1e6).unwrap();
        for &q in p.as_slice() {
            assert_close(q, 1.0 / 3.0, 1e-5);
        }
    }

    #[test]
    fn softmax_two_logit_oracle() {
        // exp(2)/(exp(2)+1) evaluated by an independent high-precision script.
        let p = softmax(&[2.0, 0.0], 1.0).unwrap();
        assert_close(p.as_slice()[0], 0.8807970779778824, 1e-15);
        assert_close(p.as_slice()[1], 0.11920292202211755, 1e-15);
    }

    #[test]
    fn softmax_no_overflow_at_large_logits() {
        let p = softmax(&[1e4, -1e4], 1.0).unwrap();
        assert!(p.as_slice().iter().all(|q| q.is_finite()));
        assert_close(p.as_slice()[0], 1.0, 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax(&[0.0, 1.0], 0.0).is_err());
        assert!(softmax(&[0.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let t = LabelTarget::one_hot(0, 2).unwrap();
        let p = ProbabilityVector::new(vec![1.0 - 1e-12, 1e-12]).unwrap();
        assert_close(cross_entropy(&t, &p).unwrap(), 0.0, 1e-11);
    }

    #[test]
    fn cross_entropy_uniform_to_uniform_is_entropy() {
        let t = LabelTarget::uniform(2).unwrap();
        let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert_close(cross_entropy(&t, &p).unwrap(), std::f64::consts::LN_2, 1e-15);
    }

    #[test]
    fn cross_entropy_one_hot_oracle() {
        // -ln(0.25) evaluated by an independent script.
        let t = LabelTarget::one_hot(1, 2).unwrap();
        let p = ProbabilityVector::new(vec![0.75, 0.25]).unwrap();
        assert_close(cross_entropy(&t, &p).unwrap(), 1.3862943611198906, 1e-15);
    }

    #[test]
    fn cross_entropy_dimension_mismatch() {
        let t = LabelTarget::one_hot(0, 3).unwrap();
        let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(cross_entropy(&t, &p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cross_entropy_stays_finite_on_saturated_prediction() {
        let t = LabelTarget::one_hot(1, 2).unwrap();
        let p = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        let loss = cross_entropy(&t, &p).unwrap();
        assert!(loss.is_finite());
        assert_close(loss, -LOG_CLAMP.ln(), 1e-9);
    }

    #[test]
    fn materialized_targets_are_valid() {
        let e1 = LabelTarget::one_hot(1, 4).unwrap().materialize();
        assert_eq!(e1.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        let u = LabelTarget::uniform(4).unwrap().materialize();
        assert_eq!(u.as_slice(), &[0.25; 4]);
        assert!(ProbabilityVector::new(u.as_slice().to_vec()).is_ok());
    }

    #[test]
    fn one_hot_bounds_checked() {
        assert!(LabelTarget::one_hot(4, 4).is_err());
        assert!(LabelTarget::one_hot(0, 1).is_err());
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbabilityVector::new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn argmax_ties_resolve_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }
}
