//! Finite-difference gradient verification.
//!
//! Central differences with step 1e-5 against the analytic backward pass.
//! Exposed as a library module (not test-only) because the acceptance suite
//! in the binary crate drives the same checks.

use super::{Classifier, LogitLoss};
use crate::vector::DenseVector;
use crate::Result;

/// Central-difference step. Small enough for 1e-4 relative agreement at
/// f64 precision, large enough to stay clear of cancellation noise.
pub const FD_STEP: f64 = 1e-5;

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-8)
}

/// Relative l∞ error between the analytic input gradient and central finite
/// differences of the loss.
pub fn input_grad_rel_error(
    model: &Classifier,
    x: &DenseVector,
    loss: &dyn LogitLoss,
) -> Result<f64> {
    let analytic = model.input_gradient(x, loss)?;
    let mut numeric = vec![0.0; x.dim()];
    let mut probe = x.clone();
    for i in 0..x.dim() {
        let original = probe[i];
        probe[i] = original + FD_STEP;
        let plus = loss.value(&model.forward(probe.as_slice())?)?;
        probe[i] = original - FD_STEP;
        let minus = loss.value(&model.forward(probe.as_slice())?)?;
        probe[i] = original;
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(rel_error(analytic.as_slice(), &numeric))
}

/// Relative l∞ error between the analytic parameter gradient and central
/// finite differences of the loss.
pub fn param_grad_rel_error(
    model: &Classifier,
    x: &DenseVector,
    loss: &dyn LogitLoss,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_param_gradient(x, loss)?;
    let mut perturbed = model.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for i in 0..analytic.len() {
        let original = perturbed.params()[i];
        perturbed.params_mut()[i] = original + FD_STEP;
        let plus = loss.value(&perturbed.forward(x.as_slice())?)?;
        perturbed.params_mut()[i] = original - FD_STEP;
        let minus = loss.value(&perturbed.forward(x.as_slice())?)?;
        perturbed.params_mut()[i] = original;
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(rel_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::prob::{cross_entropy, softmax, LabelTarget};
    use crate::seed::rng_from;
    use rand::Rng;

    /// Cross-entropy against a one-hot target as a logit loss; the analytic
    /// gradient is softmax(f) − e_y.
    struct Ce(usize);
    impl LogitLoss for Ce {
        fn value(&self, logits: &[f64]) -> Result<f64> {
            let target = LabelTarget::one_hot(self.0, logits.len())?;
            cross_entropy(&target, &softmax(logits, 1.0)?)
        }
        fn grad(&self, logits: &[f64]) -> Result<Vec<f64>> {
            let p = softmax(logits, 1.0)?;
            let mut g = p.as_slice().to_vec();
            g[self.0] -= 1.0;
            Ok(g)
        }
    }

    #[test]
    fn two_layer_relu_net_matches_finite_differences() {
        let arch = Architecture::Mlp {
            input_dim: 6,
            hidden: vec![16, 16],
            classes: 3,
        };
        let mut rng = rng_from(2024);
        for probe in 0..5 {
            let model = Classifier::init(arch.clone(), 100 + probe).unwrap();
            let x = DenseVector::new((0..6).map(|_| rng.gen_range(0.05..0.95)).collect());
            let loss = Ce(probe as usize % 3);
            assert!(input_grad_rel_error(&model, &x, &loss).unwrap() < 1e-4);
            assert!(param_grad_rel_error(&model, &x, &loss).unwrap() < 1e-4);
        }
    }

    #[test]
    fn conv_net_matches_finite_differences() {
        let arch = Architecture::TinyConv {
            height: 8,
            width: 8,
            channels: 1,
            classes: 3,
        };
        let mut rng = rng_from(77);
        for probe in 0..3 {
            let model = Classifier::init(arch.clone(), 500 + probe).unwrap();
            let x = DenseVector::new((0..64).map(|_| rng.gen_range(0.05..0.95)).collect());
            let loss = Ce(probe as usize % 3);
            assert!(input_grad_rel_error(&model, &x, &loss).unwrap() < 1e-4);
            assert!(param_grad_rel_error(&model, &x, &loss).unwrap() < 1e-4);
        }
    }
}
