//! Differentiable classifiers with exact analytic gradients.
//!
//! Two reference architectures cover the pipeline's needs: a ReLU MLP for
//! low-dimensional data and a tiny two-stage conv net for 28–32 px images.
//! Both expose logits `f: [0,1]^d → R^K`, gradients of an arbitrary scalar
//! loss of the logits with respect to the input (consumed by attacks), and
//! with respect to the parameters (consumed by training). Gradients are
//! exact backpropagation; the test suites verify them against central
//! finite differences.
//!
//! Inputs use a flat layout. Images are channel-major: value `(c, y, x)`
//! lives at index `(c·H + y)·W + x`.

mod conv;
mod mlp;

pub mod checkpoint;
pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::seed::rng_from;
use crate::vector::DenseVector;
use crate::{Error, Result};
use rand::Rng;

/// Architecture descriptor. Parameter layouts are fixed by the descriptor
/// and documented per variant; checkpoints serialize the descriptor as a
/// text line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected ReLU net: `input_dim → hidden[0] → … → classes`.
    /// Parameters are stored layer by layer, row-major weights then biases.
    /// An empty `hidden` list yields a linear model.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    /// Two 3×3 conv layers (8 then 16 filters, padding 1), each followed by
    /// ReLU and 2×2 max-pooling, then a linear layer to the logits.
    /// Height and width must be divisible by 4.
    TinyConv {
        height: usize,
        width: usize,
        channels: usize,
        classes: usize,
    },
}

pub(crate) const CONV_F1: usize = 8;
pub(crate) const CONV_F2: usize = 16;

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                if *input_dim == 0 {
                    return Err(Error::invalid("mlp input_dim must be positive"));
                }
                if *classes < 2 {
                    return Err(Error::invalid("mlp needs at least 2 classes"));
                }
                if hidden.iter().any(|&h| h == 0) {
                    return Err(Error::invalid("mlp hidden widths must be positive"));
                }
                Ok(())
            }
            Architecture::TinyConv {
                height,
                width,
                channels,
                classes,
            } => {
                if *height < 4 || *width < 4 || *height % 4 != 0 || *width % 4 != 0 {
                    return Err(Error::invalid(format!(
                        "conv input sides must be multiples of 4, got {height}x{width}"
                    )));
                }
                if *channels == 0 {
                    return Err(Error::invalid("conv channel count must be positive"));
                }
                if *classes < 2 {
                    return Err(Error::invalid("conv needs at least 2 classes"));
                }
                Ok(())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp { input_dim, .. } => *input_dim,
            Architecture::TinyConv {
                height,
                width,
                channels,
                ..
            } => height * width * channels,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::Mlp { classes, .. } | Architecture::TinyConv { classes, .. } => *classes,
        }
    }

    /// Layer widths including input and output, e.g. `[d, 64, 64, K]`.
    pub(crate) fn mlp_dims(&self) -> Vec<usize> {
        match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let mut dims = Vec::with_capacity(hidden.len() + 2);
                dims.push(*input_dim);
                dims.extend_from_slice(hidden);
                dims.push(*classes);
                dims
            }
            _ => unreachable!("mlp_dims on non-mlp architecture"),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Mlp { .. } => {
                let dims = self.mlp_dims();
                dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
            }
            Architecture::TinyConv {
                height,
                width,
                channels,
                classes,
            } => {
                let flat = CONV_F2 * (height / 4) * (width / 4);
                (CONV_F1 * channels * 9 + CONV_F1)
                    + (CONV_F2 * CONV_F1 * 9 + CONV_F2)
                    + (classes * flat + classes)
            }
        }
    }
}

/// A scalar loss of the logits, differentiable where the attacks need it.
pub trait LogitLoss {
    fn value(&self, logits: &[f64]) -> Result<f64>;
    /// Gradient of the loss with respect to the logits.
    fn grad(&self, logits: &[f64]) -> Result<Vec<f64>>;
}

/// Gradients produced by one backward pass.
pub struct Backprop {
    pub input_grad: Vec<f64>,
    /// Present only when requested; skipping it keeps attacks cheap.
    pub param_grad: Option<Vec<f64>>,
}

pub(crate) enum Cache {
    Mlp(mlp::MlpCache),
    Conv(conv::ConvCache),
}

/// A classifier: an architecture plus a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    arch: Architecture,
    params: Vec<f64>,
}

impl Classifier {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::shape(format!(
                "architecture wants {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Classifier { arch, params })
    }

    /// Fan-in-scaled uniform initialization: each weight block draws from
    /// `U(−1/√fan_in, 1/√fan_in)`; biases start at zero. Deterministic in
    /// the seed.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_from(seed);
        let mut params = vec![0.0; arch.param_count()];
        let mut fill = |params: &mut [f64], offset: usize, len: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offset..offset + len] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        match &arch {
            Architecture::Mlp { .. } => {
                let dims = arch.mlp_dims();
                let mut offset = 0;
                for w in dims.windows(2) {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    fill(&mut params, offset, fan_in * fan_out, fan_in);
                    offset += (fan_in + 1) * fan_out;
                }
            }
            Architecture::TinyConv {
                height,
                width,
                channels,
                classes,
            } => {
                let mut offset = 0;
                fill(&mut params, offset, CONV_F1 * channels * 9, channels * 9);
                offset += CONV_F1 * channels * 9 + CONV_F1;
                fill(&mut params, offset, CONV_F2 * CONV_F1 * 9, CONV_F1 * 9);
                offset += CONV_F2 * CONV_F1 * 9 + CONV_F2;
                let flat = CONV_F2 * (height / 4) * (width / 4);
                fill(&mut params, offset, classes * flat, flat);
            }
        }
        Ok(Classifier { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has dimension {}, model wants {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).0)
    }

    /// Logit rows for a batch; every input must have dimension d.
    pub fn forward_batch(&self, batch: &[DenseVector]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|x| self.forward(x.as_slice())).collect()
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        match &self.arch {
            Architecture::Mlp { .. } => {
                let (logits, cache) = mlp::forward(&self.arch.mlp_dims(), &self.params, x);
                (logits, Cache::Mlp(cache))
            }
            Architecture::TinyConv { .. } => {
                let (logits, cache) = conv::forward(&self.arch, &self.params, x);
                (logits, Cache::Conv(cache))
            }
        }
    }

    pub(crate) fn backward(&self, cache: &Cache, dlogits: &[f64], want_params: bool) -> Backprop {
        match (&self.arch, cache) {
            (Architecture::Mlp { .. }, Cache::Mlp(c)) => {
                mlp::backward(&self.arch.mlp_dims(), &self.params, c, dlogits, want_params)
            }
            (Architecture::TinyConv { .. }, Cache::Conv(c)) => {
                conv::backward(&self.arch, &self.params, c, dlogits, want_params)
            }
            _ => unreachable!("cache does not match architecture"),
        }
    }

    /// Loss value and `∇_x loss(f(x))` in one pass.
    pub fn loss_and_input_gradient(
        &self,
        x: &DenseVector,
        loss: &dyn LogitLoss,
    ) -> Result<(f64, DenseVector)> {
        self.check_input(x.as_slice())?;
        let (logits, cache) = self.forward_cached(x.as_slice());
        let value = loss.value(&logits)?;
        let dlogits = loss.grad(&logits)?;
        let bp = self.backward(&cache, &dlogits, false);
        Ok((value, DenseVector::new(bp.input_grad)))
    }

    /// `∇_x loss(f(x))`.
    pub fn input_gradient(&self, x: &DenseVector, loss: &dyn LogitLoss) -> Result<DenseVector> {
        Ok(self.loss_and_input_gradient(x, loss)?.1)
    }

    /// Loss value and `∇_θ loss(f(x))`.
    pub fn loss_and_param_gradient(
        &self,
        x: &DenseVector,
        loss: &dyn LogitLoss,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x.as_slice())?;
        let (logits, cache) = self.forward_cached(x.as_slice());
        let value = loss.value(&logits)?;
        let dlogits = loss.grad(&logits)?;
        let bp = self.backward(&cache, &dlogits, true);
        Ok((value, bp.param_grad.expect("param grad requested")))
    }

    /// Predicted class: argmax of the logits, ties to the lowest index.
    pub fn predicted_class(&self, x: &DenseVector) -> Result<usize> {
        Ok(crate::prob::argmax(&self.forward(x.as_slice())?))
    }
}
