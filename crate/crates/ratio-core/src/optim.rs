//! SGD with Nesterov momentum, weight decay, and a milestone learning-rate
//! schedule.
//!
//! Defaults mirror the training recipe the objectives were tuned with:
//! base learning rate 0.1, momentum 0.9, weight decay 5e-4, decay factor 10×
//! at epoch fractions {0.5, 0.75, 0.9}. Weight decay applies to all
//! parameters including biases; this keeps runs bit-reproducible without a
//! per-block exemption table.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub nesterov_momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Epoch fractions in (0,1), strictly increasing; each marks a point
    /// where the learning rate is multiplied by `lr_decay_factor`.
    pub decay_milestones: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            nesterov_momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.1,
            decay_milestones: vec![0.5, 0.75, 0.9],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.nesterov_momentum) {
            return Err(Error::invalid("nesterov_momentum must lie in [0,1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::invalid("lr_decay_factor must be positive"));
        }
        for pair in self.decay_milestones.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid("decay_milestones must be strictly increasing"));
            }
        }
        if self
            .decay_milestones
            .iter()
            .any(|&m| !(0.0 < m && m < 1.0))
        {
            return Err(Error::invalid("decay_milestones must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Milestone fractions resolved against a concrete epoch count.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    base_lr: f64,
    factor: f64,
    milestone_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn new(cfg: &OptimizerConfig, total_epochs: usize) -> Result<Self> {
        cfg.validate()?;
        let milestone_epochs = cfg
            .decay_milestones
            .iter()
            .map(|&f| (f * total_epochs as f64).floor() as usize)
            .collect();
        Ok(LrSchedule {
            base_lr: cfg.base_lr,
            factor: cfg.lr_decay_factor,
            milestone_epochs,
        })
    }

    /// Number of decay events that have fired at or before `epoch`.
    pub fn decays_through(&self, epoch: usize) -> usize {
        self.milestone_epochs.iter().filter(|&&m| m <= epoch).count()
    }

    /// Learning rate in force during `epoch`:
    /// `base_lr · factor^(milestones ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.factor.powi(self.decays_through(epoch) as i32)
    }
}

/// Momentum state; one velocity per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn zeros(n: usize) -> Self {
        SgdState {
            velocity: vec![0.0; n],
        }
    }
}

/// One Nesterov step: `g += wd·p`, `v ← βv − lr·g`, `p ← p + βv − lr·g`.
///
/// `grads` is borrowed immutably; the weight-decay term is added on the fly.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SgdState,
    cfg: &OptimizerConfig,
    lr: f64,
) {
    assert_eq!(params.len(), grads.len(), "sgd_step: shape mismatch");
    assert_eq!(params.len(), state.velocity.len(), "sgd_step: state mismatch");
    let beta = cfg.nesterov_momentum;
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        let v = beta * state.velocity[i] - lr * g;
        state.velocity[i] = v;
        params[i] += beta * v - lr * g;
    }
}
