//! Inner-maximization engines: attack losses, momentum PGD with
//! best-over-trajectory tracking, random restarts, and targeted confidence
//! maximization.
//!
//! The PGD iteration is
//!
//! ```text
//! m_k = μ·m_{k−1} + g_k/‖g_k‖₂        (momentum over normalized gradients)
//! z_{k+1} = Π( z_k + step · m_k/‖m_k‖₂ )
//! ```
//!
//! where `Π` projects onto the threat model intersected with the unit box.
//! Every iterate including the start is scored, and the feasible iterate of
//! maximum score is returned, so the result can never be worse than the
//! starting point. All randomness (restart initializations, the fallback
//! direction when the first gradient vanishes) derives from the call's seed.

use serde::{Deserialize, Serialize};

use crate::model::{Classifier, LogitLoss};
use crate::prob::{argmax, cross_entropy, softmax, LabelTarget};
use crate::seed::{rng_from, split_seed, stream};
use crate::threat::ThreatModel;
use crate::vector::DenseVector;
use crate::{Error, Result};
use rand::Rng;

/// Loss maximized by an attack, as a function of the logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackLoss {
    /// `max_{i≠y} f_i − f_y`: positive iff the point is misclassified.
    /// Used for training-time inner maximization and robust accuracy.
    CwLogit { label: usize },
    /// Cross-entropy toward an explicit target distribution. The uniform
    /// target drives out-distribution confidence down.
    CeToTarget { target: LabelTarget },
    /// Log-confidence `log p̂_t` of a fixed class; maximizing it drives the
    /// confidence in `t` up. Log rather than raw confidence for gradient
    /// conditioning; the argmax is identical.
    TargetConfidence { class: usize },
}

/// `max_{i≠y} f_i(z) − f_y(z)`; ties for the runner-up resolve to the lowest
/// index so gradients are deterministic.
pub fn cw_logit_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::invalid("cw loss needs at least 2 classes"));
    }
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "cw loss label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(runner_up - logits[label])
}

fn runner_up_index(logits: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in logits.iter().enumerate() {
        if i == label {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = i;
        }
    }
    best
}

impl LogitLoss for AttackLoss {
    fn value(&self, logits: &[f64]) -> Result<f64> {
        match self {
            AttackLoss::CwLogit { label } => cw_logit_loss(logits, *label),
            AttackLoss::CeToTarget { target } => {
                cross_entropy(target, &softmax(logits, 1.0)?)
            }
            AttackLoss::TargetConfidence { class } => log_confidence(logits, *class, 1.0),
        }
    }

    fn grad(&self, logits: &[f64]) -> Result<Vec<f64>> {
        match self {
            AttackLoss::CwLogit { label } => {
                if logits.len() < 2 || *label >= logits.len() {
                    return Err(Error::invalid("cw loss label/class mismatch"));
                }
                let mut g = vec![0.0; logits.len()];
                g[runner_up_index(logits, *label)] = 1.0;
                g[*label] = -1.0;
                Ok(g)
            }
            AttackLoss::CeToTarget { target } => {
                if target.classes() != logits.len() {
                    return Err(Error::shape("ce target class count mismatch"));
                }
                let p_hat = softmax(logits, 1.0)?;
                let p = target.materialize();
                Ok(p_hat
                    .as_slice()
                    .iter()
                    .zip(p.as_slice())
                    .map(|(q, t)| q - t)
                    .collect())
            }
            AttackLoss::TargetConfidence { class } => {
                if *class >= logits.len() {
                    return Err(Error::invalid("target confidence class out of range"));
                }
                let p_hat = softmax(logits, 1.0)?;
                let mut g: Vec<f64> = p_hat.as_slice().iter().map(|q| -q).collect();
                g[*class] += 1.0;
                Ok(g)
            }
        }
    }
}

/// `log softmax(f/T)_t`, computed with max-subtraction.
pub(crate) fn log_confidence(logits: &[f64], class: usize, temperature: f64) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::invalid("log confidence class out of range"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|&f| ((f - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    Ok((logits[class] - max) / temperature - lse)
}

/// Iterate-selection score: how the attack ranks trajectory points. Plain
/// attacks rank by their own loss; evaluation attacks rank by the statistic
/// they will report (keeping warm-started sweeps monotone in that statistic).
#[derive(Clone, Copy, Debug)]
pub(crate) enum Select {
    /// The attack loss itself.
    GradLoss,
    /// `log p̂_c(z, T)`: confidence maximization at a reporting temperature.
    LogConfidence { class: usize, temperature: f64 },
    /// `−log p̂_c(z, T)`: selects the iterate of minimal class confidence.
    NegLogConfidence { class: usize, temperature: f64 },
    /// `max_k log p̂_k(z, T)`: selects by maximal confidence over classes.
    MaxLogConfidence { temperature: f64 },
}

impl Select {
    fn score(&self, logits: &[f64], grad_loss_value: f64) -> Result<f64> {
        match *self {
            Select::GradLoss => Ok(grad_loss_value),
            Select::LogConfidence { class, temperature } => {
                log_confidence(logits, class, temperature)
            }
            Select::NegLogConfidence { class, temperature } => {
                Ok(-log_confidence(logits, class, temperature)?)
            }
            Select::MaxLogConfidence { temperature } => {
                log_confidence(logits, argmax(logits), temperature)
            }
        }
    }
}

/// PGD budget and dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    /// Gradient steps per restart; 0 evaluates the start point only.
    pub steps: usize,
    /// Movement per step in input-space units along the normalized direction.
    pub step_size: f64,
    /// Momentum weight μ on the accumulated direction.
    pub momentum: f64,
    /// Number of restarts; the first starts at the given point, the rest at
    /// uniform random feasible initializations.
    pub restarts: usize,
    /// Start the first run from a random feasible point instead of `x`.
    pub random_init: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            steps: 7,
            step_size: 0.1,
            momentum: 0.9,
            restarts: 1,
            random_init: false,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("pgd step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("pgd momentum must lie in [0,1)"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("pgd needs at least 1 restart"));
        }
        Ok(())
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

/// Outcome of an attack: the best feasible iterate and its score.
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub z_best: DenseVector,
    /// Maximal selection score over all recorded iterates and restarts. For
    /// `pgd`/`pgd_restarts` this is the attack loss; for confidence attacks
    /// it is the confidence `p̂_t(z_best)` itself.
    pub loss_best: f64,
    /// Scores at every iterate (start included) of the winning restart.
    pub trajectory_losses: Vec<f64>,
    /// Which restart produced `z_best` (0-based).
    pub restart_index: usize,
}

/// Draws a start uniformly from the l∞ cube inscribed in the threat model,
/// then projects onto the feasible set.
fn random_start(
    center: &DenseVector,
    tm: &ThreatModel,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> DenseVector {
    let d = center.dim();
    let half_width = match tm.norm {
        crate::threat::Norm::L2 => tm.epsilon / (d as f64).sqrt(),
        crate::threat::Norm::Linf => tm.epsilon,
    };
    if half_width <= 0.0 {
        return center.clone();
    }
    let drawn: Vec<f64> = center
        .as_slice()
        .iter()
        .map(|&c| c + rng.gen_range(-half_width..=half_width))
        .collect();
    tm.project(&DenseVector::new(drawn), center)
}

fn random_direction(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DenseVector {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let dir = DenseVector::new(v);
        let norm = dir.l2_norm();
        if norm > 1e-9 {
            let mut unit = dir;
            for x in unit.as_mut_slice() {
                *x /= norm;
            }
            return unit;
        }
    }
}

/// One PGD run from a fixed start. Internal: public attacks and the
/// evaluation profiles drive it with their own selection scores.
pub(crate) fn run_pgd(
    model: &Classifier,
    center: &DenseVector,
    start: &DenseVector,
    tm: &ThreatModel,
    grad_loss: &AttackLoss,
    select: Select,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut z = tm.project(start, center);

    let score_at = |z: &DenseVector, want_grad: bool| -> Result<(f64, Option<DenseVector>)> {
        let (logits, cache) = model.forward_cached(z.as_slice());
        let value = grad_loss.value(&logits)?;
        let score = select.score(&logits, value)?;
        let grad = if want_grad {
            let dlogits = grad_loss.grad(&logits)?;
            Some(DenseVector::new(
                model.backward(&cache, &dlogits, false).input_grad,
            ))
        } else {
            None
        };
        Ok((score, grad))
    };

    // Degenerate budgets return the start point itself.
    let steps = if tm.epsilon == 0.0 { 0 } else { cfg.steps };

    let mut trajectory = Vec::with_capacity(steps + 1);
    let (score0, _) = score_at(&z, false)?;
    trajectory.push(score0);
    let mut best_z = z.clone();
    let mut best_score = score0;

    let mut momentum = DenseVector::zeros(center.dim());
    let mut have_direction = false;
    for _ in 0..steps {
        let (_, grad) = score_at(&z, true)?;
        let grad = grad.expect("gradient requested");
        let norm = grad.l2_norm();
        if norm > 0.0 {
            let mut m = momentum;
            for v in m.as_mut_slice() {
                *v *= cfg.momentum;
            }
            m.scaled_add(1.0 / norm, &grad);
            momentum = m;
            have_direction = true;
        } else if !have_direction {
            // First gradient vanished: take a random feasible direction.
            momentum = random_direction(center.dim(), &mut rng);
            have_direction = true;
        }
        // else: zero gradient mid-run keeps the previous direction.

        let dir_norm = momentum.l2_norm();
        if dir_norm == 0.0 {
            // Momentum cancelled exactly; the point does not move, so its
            // score is the previous iterate's score.
            let stay = *trajectory.last().expect("start recorded");
            trajectory.push(stay);
            continue;
        }
        let mut proposal = z.clone();
        proposal.scaled_add(cfg.step_size / dir_norm, &momentum);
        z = tm.project(&proposal, center);

        let (score, _) = score_at(&z, false)?;
        trajectory.push(score);
        if score > best_score {
            best_score = score;
            best_z = z.clone();
        }
    }

    Ok(AttackResult {
        z_best: best_z,
        loss_best: best_score,
        trajectory_losses: trajectory,
        restart_index: 0,
    })
}

/// Single-run PGD maximizing `loss` over the threat model.
///
/// Starts at `x` (or a random feasible point when `cfg.random_init`);
/// with ε = 0 or steps = 0 the result is `x` itself.
pub fn pgd(
    model: &Classifier,
    x: &DenseVector,
    tm: &ThreatModel,
    loss: &AttackLoss,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<AttackResult> {
    let run_seed = split_seed(seed, &[stream::RESTART, 0]);
    let start = if cfg.random_init && tm.epsilon > 0.0 {
        let mut rng = rng_from(split_seed(run_seed, &[1]));
        random_start(x, tm, &mut rng)
    } else {
        x.clone()
    };
    run_pgd(model, x, &start, tm, loss, Select::GradLoss, cfg, run_seed)
}

/// PGD with `cfg.restarts` runs: the first from `x` (or random when
/// `cfg.random_init`), the rest from uniform random feasible points. Returns
/// the best result across restarts; earlier restarts win ties.
pub fn pgd_restarts(
    model: &Classifier,
    x: &DenseVector,
    tm: &ThreatModel,
    loss: &AttackLoss,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<AttackResult> {
    run_restarts(model, x, tm, loss, Select::GradLoss, cfg, seed)
}

pub(crate) fn run_restarts(
    model: &Classifier,
    x: &DenseVector,
    tm: &ThreatModel,
    grad_loss: &AttackLoss,
    select: Select,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut best: Option<AttackResult> = None;
    for r in 0..cfg.restarts {
        let run_seed = split_seed(seed, &[stream::RESTART, r as u64]);
        let start = if r == 0 && !cfg.random_init {
            x.clone()
        } else if tm.epsilon > 0.0 {
            let mut rng = rng_from(split_seed(run_seed, &[1]));
            random_start(x, tm, &mut rng)
        } else {
            x.clone()
        };
        let mut result = run_pgd(model, x, &start, tm, grad_loss, select, cfg, run_seed)?;
        result.restart_index = r;
        let better = match &best {
            None => true,
            Some(b) => result.loss_best > b.loss_best,
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Attack target for confidence maximization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceTarget {
    /// A fixed class.
    Class { class: usize },
    /// The class predicted at the original (clean) point.
    Predicted,
}

impl ConfidenceTarget {
    pub(crate) fn resolve(&self, model: &Classifier, x: &DenseVector) -> Result<usize> {
        match *self {
            ConfidenceTarget::Class { class } => {
                if class >= model.classes() {
                    return Err(Error::invalid(format!(
                        "confidence target class {class} out of range for {} classes",
                        model.classes()
                    )));
                }
                Ok(class)
            }
            ConfidenceTarget::Predicted => model.predicted_class(x),
        }
    }
}

/// Maximizes the confidence `p̂_t(z, T)` over the threat model, optionally
/// warm-started; the result's `loss_best` and trajectory are confidences
/// (not log-confidences). With a warm start, the start point is recorded as
/// an iterate, so the achieved confidence can never drop below it.
pub fn maximize_confidence_at(
    model: &Classifier,
    x: &DenseVector,
    start: Option<&DenseVector>,
    tm: &ThreatModel,
    target: ConfidenceTarget,
    cfg: &PgdConfig,
    temperature: f64,
    seed: u64,
) -> Result<AttackResult> {
    let class = target.resolve(model, x)?;
    let grad_loss = AttackLoss::TargetConfidence { class };
    let select = Select::LogConfidence {
        class,
        temperature,
    };
    let mut result = match start {
        Some(s) => {
            let run_seed = split_seed(seed, &[stream::RESTART, 0]);
            run_pgd(model, x, s, tm, &grad_loss, select, cfg, run_seed)?
        }
        None => run_restarts(model, x, tm, &grad_loss, select, cfg, seed)?,
    };
    result.loss_best = result.loss_best.exp();
    for v in &mut result.trajectory_losses {
        *v = v.exp();
    }
    Ok(result)
}

/// Confidence maximization at temperature 1 starting from `x` (with
/// restarts per the config).
pub fn maximize_confidence(
    model: &Classifier,
    x: &DenseVector,
    tm: &ThreatModel,
    target: ConfidenceTarget,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<AttackResult> {
    maximize_confidence_at(model, x, None, tm, target, cfg, 1.0, seed)
}

/// Worst-case confidence attack for OOD scoring: maximizes the confidence
/// of the predicted class, or of every class when `exhaustive` (taking the
/// overall best). Exhaustive mode upper-bounds the targeted attack.
pub fn worst_case_confidence(
    model: &Classifier,
    x: &DenseVector,
    tm: &ThreatModel,
    cfg: &PgdConfig,
    temperature: f64,
    exhaustive: bool,
    seed: u64,
) -> Result<AttackResult> {
    if !exhaustive {
        return maximize_confidence_at(
            model,
            x,
            None,
            tm,
            ConfidenceTarget::Predicted,
            cfg,
            temperature,
            seed,
        );
    }
    let mut best: Option<AttackResult> = None;
    for class in 0..model.classes() {
        let result = maximize_confidence_at(
            model,
            x,
            None,
            tm,
            ConfidenceTarget::Class { class },
            cfg,
            temperature,
            split_seed(seed, &[class as u64]),
        )?;
        let better = match &best {
            None => true,
            Some(b) => result.loss_best > b.loss_best,
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("classes >= 2"))
}
