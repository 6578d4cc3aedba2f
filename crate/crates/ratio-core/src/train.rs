//! Training objectives and the epoch loop.
//!
//! Five objectives share one batch-composition rule:
//!
//! ```text
//! loss = mean_in  [ frac·L(e_y, p̂(x)) + (1−frac)·L(e_y, p̂(z_in)) ]
//!      + λ · mean_out L(1/K, p̂(z_out))
//! ```
//!
//! * Plain: identity inner points, no out stream.
//! * OE (outlier exposure): clean out-points pulled toward uniform.
//! * AT: in-points attacked inside `B₂(x, ε_i)` with the CW logit loss.
//! * ACET: clean in-term; out-points attacked inside `B₂(x, ε_o)` toward
//!   maximal uniform-target cross-entropy.
//! * The combined objective: both attacks, optionally mixing a clean
//!   fraction into the in-term (`clean_in_fraction`, 0.5 reproduces the
//!   50/50 batch scheme).
//!
//! Inner maximization uses the CW logit loss; the parameter update uses the
//! cross-entropy gradient at the attacked points. These are deliberately
//! different losses.
//!
//! Seeds are split per (epoch, batch, example, stream), so objectives that
//! ignore a stream consume none of its randomness: the reduction identities
//! (λ=0 ≡ AT, ε_i=0 ≡ ACET form, ε_o=0 ≡ OE, AT ε=0 ≡ Plain) hold
//! bit-exactly on fixed seeds.

use serde::{Deserialize, Serialize};

use crate::attack::{pgd, AttackLoss, PgdConfig};
use crate::data::Dataset;
use crate::model::{Architecture, Classifier, LogitLoss};
use crate::optim::{sgd_step, LrSchedule, OptimizerConfig, SgdState};
use crate::prob::LabelTarget;
use crate::seed::{rng_from, split_seed, stream};
use crate::threat::ThreatModel;
use crate::vector::DenseVector;
use crate::{Error, Result};
use rand::seq::SliceRandom;

/// Batch-composition tag for seed splitting.
const BATCH_TAG: u64 = 0x0a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    Plain,
    OutlierExposure {
        lambda: f64,
    },
    AdversarialTraining {
        eps_in: f64,
    },
    Acet {
        eps_out: f64,
        lambda: f64,
    },
    Ratio {
        eps_in: f64,
        eps_out: f64,
        lambda: f64,
        clean_in_fraction: f64,
    },
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &str, v: f64| -> Result<()> {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
            Ok(())
        };
        match *self {
            ObjectiveKind::Plain => Ok(()),
            ObjectiveKind::OutlierExposure { lambda } => non_negative("lambda", lambda),
            ObjectiveKind::AdversarialTraining { eps_in } => non_negative("eps_in", eps_in),
            ObjectiveKind::Acet { eps_out, lambda } => {
                non_negative("eps_out", eps_out)?;
                non_negative("lambda", lambda)
            }
            ObjectiveKind::Ratio {
                eps_in,
                eps_out,
                lambda,
                clean_in_fraction,
            } => {
                non_negative("eps_in", eps_in)?;
                non_negative("eps_out", eps_out)?;
                non_negative("lambda", lambda)?;
                if !(0.0..=1.0).contains(&clean_in_fraction) {
                    return Err(Error::invalid("clean_in_fraction must lie in [0,1]"));
                }
                Ok(())
            }
        }
    }

    /// Whether the in-distribution term attacks its points.
    pub fn attacks_in(&self) -> bool {
        matches!(
            self,
            ObjectiveKind::AdversarialTraining { .. } | ObjectiveKind::Ratio { .. }
        )
    }

    /// Whether the objective consumes an out-distribution stream at all.
    pub fn uses_out_stream(&self) -> bool {
        matches!(
            self,
            ObjectiveKind::OutlierExposure { .. }
                | ObjectiveKind::Acet { .. }
                | ObjectiveKind::Ratio { .. }
        )
    }

    /// Whether the out-distribution term attacks its points.
    pub fn attacks_out(&self) -> bool {
        matches!(self, ObjectiveKind::Acet { .. } | ObjectiveKind::Ratio { .. })
    }

    pub fn eps_in(&self) -> f64 {
        match *self {
            ObjectiveKind::AdversarialTraining { eps_in }
            | ObjectiveKind::Ratio { eps_in, .. } => eps_in,
            _ => 0.0,
        }
    }

    pub fn eps_out(&self) -> f64 {
        match *self {
            ObjectiveKind::Acet { eps_out, .. } | ObjectiveKind::Ratio { eps_out, .. } => eps_out,
            _ => 0.0,
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            ObjectiveKind::OutlierExposure { lambda }
            | ObjectiveKind::Acet { lambda, .. }
            | ObjectiveKind::Ratio { lambda, .. } => lambda,
            _ => 0.0,
        }
    }

    fn clean_in_fraction(&self) -> f64 {
        match *self {
            ObjectiveKind::Ratio {
                clean_in_fraction, ..
            } => clean_in_fraction,
            _ => 0.0,
        }
    }
}

/// Which data stream an example belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    In,
    Out,
}

/// The inner-maximization point for one example.
///
/// In-stream: attacked with the CW logit loss inside `B₂(x, ε_i)` for the
/// objectives that attack it, otherwise `x`. Out-stream: attacked toward
/// maximal cross-entropy against the uniform target inside `B₂(x, ε_o)` for
/// ACET and the combined objective, otherwise `x`. The in-stream always
/// requires a label.
pub fn inner_point(
    objective: &ObjectiveKind,
    model: &Classifier,
    x: &DenseVector,
    label: Option<usize>,
    stream: Stream,
    attack: &PgdConfig,
    seed: u64,
) -> Result<DenseVector> {
    objective.validate()?;
    match stream {
        Stream::In => {
            let y = label.ok_or_else(|| Error::invalid("in-stream point needs a label"))?;
            if !objective.attacks_in() {
                return Ok(x.clone());
            }
            let tm = ThreatModel::l2(objective.eps_in())?;
            let loss = AttackLoss::CwLogit { label: y };
            Ok(pgd(model, x, &tm, &loss, attack, seed)?.z_best)
        }
        Stream::Out => {
            if !objective.attacks_out() {
                return Ok(x.clone());
            }
            let tm = ThreatModel::l2(objective.eps_out())?;
            let loss = AttackLoss::CeToTarget {
                target: LabelTarget::uniform(model.classes())?,
            };
            Ok(pgd(model, x, &tm, &loss, attack, seed)?.z_best)
        }
    }
}

/// Loss (and optionally parameter gradient) of one composed batch.
struct BatchTerms {
    loss: f64,
    grad: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn batch_terms(
    objective: &ObjectiveKind,
    model: &Classifier,
    in_points: &[(&DenseVector, usize)],
    out_points: &[&DenseVector],
    attack_in: &PgdConfig,
    attack_out: &PgdConfig,
    seed: u64,
    want_grad: bool,
) -> Result<BatchTerms> {
    objective.validate()?;
    if in_points.is_empty() {
        return Err(Error::invalid("in-distribution batch is empty"));
    }
    if objective.uses_out_stream() && out_points.is_empty() {
        return Err(Error::invalid("objective needs a non-empty out batch"));
    }

    let classes = model.classes();
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; model.params().len()]);

    let accumulate = |point: &DenseVector,
                          target: &LabelTarget,
                          weight: f64,
                          grad: &mut Option<Vec<f64>>|
     -> Result<f64> {
        let ce = AttackLoss::CeToTarget {
            target: target.clone(),
        };
        if let Some(acc) = grad.as_mut() {
            let (value, g) = model.loss_and_param_gradient(point, &ce)?;
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += weight * gi;
            }
            Ok(value)
        } else {
            let logits = model.forward(point.as_slice())?;
            ce.value(&logits)
        }
    };

    // In-distribution term.
    let frac_clean = objective.clean_in_fraction();
    let in_weight = 1.0 / in_points.len() as f64;
    for (i, (x, y)) in in_points.iter().enumerate() {
        let target = LabelTarget::one_hot(*y, classes)?;
        let z = inner_point(
            objective,
            model,
            x,
            Some(*y),
            Stream::In,
            attack_in,
            split_seed(seed, &[stream::IN_ATTACK, i as u64]),
        )?;
        let adv = accumulate(&z, &target, in_weight * (1.0 - frac_clean), &mut grad)?;
        if frac_clean > 0.0 {
            let clean = accumulate(x, &target, in_weight * frac_clean, &mut grad)?;
            loss += in_weight * (frac_clean * clean + (1.0 - frac_clean) * adv);
        } else {
            loss += in_weight * adv;
        }
    }

    // Out-distribution term.
    if objective.uses_out_stream() {
        let lambda = objective.lambda();
        let uniform = LabelTarget::uniform(classes)?;
        let out_weight = lambda / out_points.len() as f64;
        for (i, x) in out_points.iter().enumerate() {
            let z = inner_point(
                objective,
                model,
                x,
                None,
                Stream::Out,
                attack_out,
                split_seed(seed, &[stream::OUT_ATTACK, i as u64]),
            )?;
            let value = accumulate(&z, &uniform, out_weight, &mut grad)?;
            loss += out_weight * value;
        }
    }

    Ok(BatchTerms { loss, grad })
}

/// The composed training loss of one batch; see the module docs for the
/// formula. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    objective: &ObjectiveKind,
    model: &Classifier,
    in_xs: &[DenseVector],
    in_ys: &[usize],
    out_xs: &[DenseVector],
    attack_in: &PgdConfig,
    attack_out: &PgdConfig,
    seed: u64,
) -> Result<f64> {
    if in_xs.len() != in_ys.len() {
        return Err(Error::shape("in_xs and in_ys lengths differ"));
    }
    let in_points: Vec<(&DenseVector, usize)> =
        in_xs.iter().zip(in_ys.iter().copied()).collect();
    let out_points: Vec<&DenseVector> = out_xs.iter().collect();
    Ok(batch_terms(
        objective,
        model,
        &in_points,
        &out_points,
        attack_in,
        attack_out,
        seed,
        false,
    )?
    .loss)
}

/// Out-attack step budget after `lr_decay_events_so_far` learning-rate
/// decays: `min(cap, base + increment·events)`.
pub fn acet_step_ramp(
    base_steps: usize,
    lr_decay_events_so_far: usize,
    increment: usize,
    cap: usize,
) -> usize {
    cap.min(base_steps + increment * lr_decay_events_so_far)
}

/// Ramp schedule for the out-attack step count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepRamp {
    pub increment: usize,
    pub cap: usize,
}

impl Default for StepRamp {
    fn default() -> Self {
        StepRamp {
            increment: 5,
            cap: 40,
        }
    }
}

/// Early-stopping metric: robust accuracy on a held-out split under a weak
/// attack. `epsilon: None` uses the objective's in-radius (clean accuracy
/// for objectives without one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub attack: PgdConfig,
    pub epsilon: Option<f64>,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            attack: PgdConfig::default(),
            epsilon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub epochs: usize,
    pub in_batch: usize,
    pub out_batch: usize,
    pub optimizer: OptimizerConfig,
    /// Inner maximization on the in-distribution stream (weak by design).
    pub attack_in: PgdConfig,
    /// Inner maximization on the out-distribution stream; its step count
    /// ramps with learning-rate decays per `out_step_ramp`.
    pub attack_out: PgdConfig,
    pub out_step_ramp: StepRamp,
    pub early_stop: EarlyStopConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::Plain,
            epochs: 60,
            in_batch: 128,
            out_batch: 128,
            optimizer: OptimizerConfig::default(),
            attack_in: PgdConfig::default(),
            attack_out: PgdConfig::default().with_steps(20),
            out_step_ramp: StepRamp::default(),
            early_stop: EarlyStopConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.optimizer.validate()?;
        self.attack_in.validate()?;
        self.attack_out.validate()?;
        self.early_stop.attack.validate()?;
        if self.in_batch == 0 {
            return Err(Error::invalid("in_batch must be positive"));
        }
        if self.uses_out_stream() && self.out_batch == 0 {
            return Err(Error::invalid("out_batch must be positive for this objective"));
        }
        Ok(())
    }

    fn uses_out_stream(&self) -> bool {
        self.objective.uses_out_stream()
    }

    /// Radius at which the early-stop metric attacks.
    pub fn early_stop_epsilon(&self) -> f64 {
        self.early_stop.epsilon.unwrap_or_else(|| self.objective.eps_in())
    }
}

/// One epoch's summary metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub clean_acc: f64,
    /// Robust accuracy on the holdout under the weak early-stop attack.
    pub robust_acc: f64,
}

/// The parameters, epoch, and metric of the best epoch seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub metric: f64,
    pub params: Vec<f64>,
}

/// Training outcome: the final model, per-epoch history, and the checkpoint
/// chosen by the early-stop metric.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Classifier,
    pub epochs_run: usize,
    pub history: Vec<EpochRow>,
    pub best: Option<BestCheckpoint>,
    pub optimizer_state: SgdState,
}

impl TrainState {
    /// The early-stop-best model; the final model when no epoch ran.
    pub fn best_model(&self) -> Classifier {
        match &self.best {
            Some(best) => {
                Classifier::new(self.model.architecture().clone(), best.params.clone())
                    .expect("stored parameters match architecture")
            }
            None => self.model.clone(),
        }
    }
}

fn check_streams(
    cfg: &TrainConfig,
    in_train: &Dataset,
    out_train: Option<&Dataset>,
    holdout: &Dataset,
) -> Result<()> {
    if in_train.is_empty() {
        return Err(Error::invalid("in-distribution training set is empty"));
    }
    if in_train.labels.is_none() {
        return Err(Error::invalid("in-distribution training set must be labeled"));
    }
    if holdout.is_empty() || holdout.labels.is_none() {
        return Err(Error::invalid("holdout split must be non-empty and labeled"));
    }
    if cfg.uses_out_stream() {
        match out_train {
            Some(out) if !out.is_empty() => {}
            _ => {
                return Err(Error::invalid(
                    "objective needs a non-empty out-distribution stream",
                ))
            }
        }
    }
    Ok(())
}

/// Runs the epoch loop and returns the full training state. Deterministic:
/// identical architecture, config, data, and seed give identical parameters.
pub fn train(
    arch: &Architecture,
    cfg: &TrainConfig,
    in_train: &Dataset,
    out_train: Option<&Dataset>,
    holdout: &Dataset,
) -> Result<TrainState> {
    cfg.validate()?;
    check_streams(cfg, in_train, out_train, holdout)?;

    let mut model = Classifier::init(arch.clone(), split_seed(cfg.seed, &[stream::INIT]))?;
    let schedule = LrSchedule::new(&cfg.optimizer, cfg.epochs)?;
    let mut opt_state = SgdState::zeros(model.params().len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestCheckpoint> = None;

    let es_tm = ThreatModel::l2(cfg.early_stop_epsilon())?;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let decay_events = schedule.decays_through(epoch);
        let out_attack = PgdConfig {
            steps: acet_step_ramp(
                cfg.attack_out.steps,
                decay_events,
                cfg.out_step_ramp.increment,
                cfg.out_step_ramp.cap,
            ),
            ..cfg.attack_out.clone()
        };

        let mut in_order: Vec<usize> = (0..in_train.len()).collect();
        in_order.shuffle(&mut rng_from(split_seed(
            cfg.seed,
            &[stream::SHUFFLE_IN, epoch as u64],
        )));

        // The out stream reshuffles each epoch and cycles within it.
        let out_order: Vec<usize> = match (cfg.uses_out_stream(), out_train) {
            (true, Some(out)) => {
                let mut order: Vec<usize> = (0..out.len()).collect();
                order.shuffle(&mut rng_from(split_seed(
                    cfg.seed,
                    &[stream::SHUFFLE_OUT, epoch as u64],
                )));
                order
            }
            _ => Vec::new(),
        };
        let mut out_cursor = 0usize;

        let mut loss_sum = 0.0;
        let mut example_count = 0usize;
        for (batch_idx, chunk) in in_order.chunks(cfg.in_batch).enumerate() {
            let labels = in_train.labels.as_ref().expect("checked labeled");
            let in_points: Vec<(&DenseVector, usize)> = chunk
                .iter()
                .map(|&i| (&in_train.points[i], labels[i]))
                .collect();

            let mut out_points: Vec<&DenseVector> = Vec::new();
            if cfg.uses_out_stream() {
                let out = out_train.expect("checked out stream");
                for _ in 0..cfg.out_batch {
                    out_points.push(&out.points[out_order[out_cursor % out_order.len()]]);
                    out_cursor += 1;
                }
            }

            let terms = batch_terms(
                &cfg.objective,
                &model,
                &in_points,
                &out_points,
                &cfg.attack_in,
                &out_attack,
                split_seed(cfg.seed, &[BATCH_TAG, epoch as u64, batch_idx as u64]),
                true,
            )?;
            sgd_step(
                model.params_mut(),
                &terms.grad.expect("gradient requested"),
                &mut opt_state,
                &cfg.optimizer,
                lr,
            );
            loss_sum += terms.loss * in_points.len() as f64;
            example_count += in_points.len();
        }

        let clean_acc = crate::eval::clean_accuracy(&model, holdout)?;
        let robust_acc = crate::eval::robust_accuracy(
            &model,
            holdout,
            &es_tm,
            &cfg.early_stop.attack,
            split_seed(cfg.seed, &[stream::EVAL, epoch as u64]),
        )?;
        history.push(EpochRow {
            epoch,
            train_loss: loss_sum / example_count.max(1) as f64,
            clean_acc,
            robust_acc,
        });
        let better = match &best {
            None => true,
            Some(b) => robust_acc > b.metric,
        };
        if better {
            best = Some(BestCheckpoint {
                epoch,
                metric: robust_acc,
                params: model.params().to_vec(),
            });
        }
    }

    Ok(TrainState {
        model,
        epochs_run: cfg.epochs,
        history,
        best,
        optimizer_state: opt_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetKind, DatasetSpec};
    use crate::prob::softmax;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn toy_arch() -> Architecture {
        Architecture::Mlp {
            input_dim: 2,
            hidden: vec![16],
            classes: 2,
        }
    }

    fn toy_model(seed: u64) -> Classifier {
        Classifier::init(toy_arch(), seed).unwrap()
    }

    fn toy_batch() -> (Vec<DenseVector>, Vec<usize>, Vec<DenseVector>) {
        let in_xs = vec![
            DenseVector::new(vec![0.2, 0.3]),
            DenseVector::new(vec![0.7, 0.8]),
            DenseVector::new(vec![0.4, 0.1]),
        ];
        let in_ys = vec![0, 1, 0];
        let out_xs = vec![
            DenseVector::new(vec![0.9, 0.1]),
            DenseVector::new(vec![0.05, 0.95]),
        ];
        (in_xs, in_ys, out_xs)
    }

    #[test]
    fn plain_inner_points_are_identity() {
        let model = toy_model(1);
        let x = DenseVector::new(vec![0.4, 0.6]);
        let cfg = PgdConfig::default();
        for stream in [Stream::In, Stream::Out] {
            let z = inner_point(
                &ObjectiveKind::Plain,
                &model,
                &x,
                Some(0),
                stream,
                &cfg,
                5,
            )
            .unwrap();
            assert_eq!(z, x);
        }
    }

    #[test]
    fn zero_radius_attack_is_identity() {
        let model = toy_model(2);
        let x = DenseVector::new(vec![0.4, 0.6]);
        let cfg = PgdConfig::default();
        let z = inner_point(
            &ObjectiveKind::AdversarialTraining { eps_in: 0.0 },
            &model,
            &x,
            Some(1),
            Stream::In,
            &cfg,
            5,
        )
        .unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn in_stream_requires_label() {
        let model = toy_model(3);
        let x = DenseVector::new(vec![0.4, 0.6]);
        let err = inner_point(
            &ObjectiveKind::Plain,
            &model,
            &x,
            None,
            Stream::In,
            &PgdConfig::default(),
            5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn plain_batch_loss_is_mean_cross_entropy() {
        let model = toy_model(4);
        let x = DenseVector::new(vec![0.3, 0.3]);
        let logits = model.forward(x.as_slice()).unwrap();
        let p = softmax(&logits, 1.0).unwrap();
        let expected = -p.as_slice()[0].max(1e-12).ln();
        let loss = batch_loss(
            &ObjectiveKind::Plain,
            &model,
            &[x],
            &[0],
            &[],
            &PgdConfig::default(),
            &PgdConfig::default(),
            9,
        )
        .unwrap();
        assert_close(loss, expected, 1e-12);
    }

    #[test]
    fn oe_on_uniform_model_is_two_log_k() {
        // A zero-parameter model outputs uniform confidences; both terms of
        // the OE loss then equal log K.
        let arch = toy_arch();
        let model = Classifier::new(arch.clone(), vec![0.0; arch.param_count()]).unwrap();
        let (in_xs, in_ys, out_xs) = toy_batch();
        let loss = batch_loss(
            &ObjectiveKind::OutlierExposure { lambda: 1.0 },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &PgdConfig::default(),
            &PgdConfig::default(),
            10,
        )
        .unwrap();
        assert_close(loss, 2.0 * (2.0f64).ln(), 1e-12);
    }

    #[test]
    fn reduction_lambda_zero_is_adversarial_training() {
        let model = toy_model(5);
        let (in_xs, in_ys, out_xs) = toy_batch();
        let atk = PgdConfig::default();
        let ratio = batch_loss(
            &ObjectiveKind::Ratio {
                eps_in: 0.1,
                eps_out: 0.2,
                lambda: 0.0,
                clean_in_fraction: 0.0,
            },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            77,
        )
        .unwrap();
        let at = batch_loss(
            &ObjectiveKind::AdversarialTraining { eps_in: 0.1 },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            77,
        )
        .unwrap();
        assert_eq!(ratio.to_bits(), at.to_bits());
    }

    #[test]
    fn reduction_zero_in_radius_is_acet() {
        let model = toy_model(6);
        let (in_xs, in_ys, out_xs) = toy_batch();
        let atk = PgdConfig::default();
        let ratio = batch_loss(
            &ObjectiveKind::Ratio {
                eps_in: 0.0,
                eps_out: 0.2,
                lambda: 0.7,
                clean_in_fraction: 0.0,
            },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            78,
        )
        .unwrap();
        let acet = batch_loss(
            &ObjectiveKind::Acet {
                eps_out: 0.2,
                lambda: 0.7,
            },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            78,
        )
        .unwrap();
        assert_eq!(ratio.to_bits(), acet.to_bits());
    }

    #[test]
    fn reduction_zero_out_radius_is_oe() {
        let model = toy_model(7);
        let (in_xs, in_ys, out_xs) = toy_batch();
        let atk = PgdConfig::default();
        let acet = batch_loss(
            &ObjectiveKind::Acet {
                eps_out: 0.0,
                lambda: 1.3,
            },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            79,
        )
        .unwrap();
        let oe = batch_loss(
            &ObjectiveKind::OutlierExposure { lambda: 1.3 },
            &model,
            &in_xs,
            &in_ys,
            &out_xs,
            &atk,
            &atk,
            79,
        )
        .unwrap();
        assert_eq!(acet.to_bits(), oe.to_bits());
    }

    #[test]
    fn reduction_zero_radius_at_is_plain() {
        let model = toy_model(8);
        let (in_xs, in_ys, _) = toy_batch();
        let atk = PgdConfig::default();
        let at = batch_loss(
            &ObjectiveKind::AdversarialTraining { eps_in: 0.0 },
            &model,
            &in_xs,
            &in_ys,
            &[],
            &atk,
            &atk,
            80,
        )
        .unwrap();
        let plain = batch_loss(
            &ObjectiveKind::Plain,
            &model,
            &in_xs,
            &in_ys,
            &[],
            &atk,
            &atk,
            80,
        )
        .unwrap();
        assert_eq!(at.to_bits(), plain.to_bits());
    }

    #[test]
    fn step_ramp_follows_the_schedule() {
        assert_eq!(acet_step_ramp(20, 0, 5, 40), 20);
        assert_eq!(acet_step_ramp(20, 2, 5, 40), 30);
        assert_eq!(acet_step_ramp(20, 9, 5, 40), 40);
    }

    fn tiny_train_config(objective: ObjectiveKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            objective,
            epochs,
            in_batch: 16,
            out_batch: 16,
            attack_in: PgdConfig::default().with_steps(3),
            attack_out: PgdConfig::default().with_steps(3),
            out_step_ramp: StepRamp {
                increment: 1,
                cap: 5,
            },
            early_stop: EarlyStopConfig {
                attack: PgdConfig::default().with_steps(3),
                epsilon: None,
            },
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn toy_data(seed: u64) -> (Dataset, Dataset) {
        let data = generate(&DatasetSpec {
            kind: DatasetKind::GaussianMixture2d {
                classes: 2,
                means: vec![[-1.5, -1.5], [1.5, 1.5]],
                sigma: 0.3,
                n: 80,
            },
            seed,
        })
        .unwrap();
        let holdout = generate(&DatasetSpec {
            kind: DatasetKind::GaussianMixture2d {
                classes: 2,
                means: vec![[-1.5, -1.5], [1.5, 1.5]],
                sigma: 0.3,
                n: 40,
            },
            seed: seed + 1,
        })
        .unwrap();
        (data, holdout)
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let (data, holdout) = toy_data(31);
        let cfg = tiny_train_config(ObjectiveKind::Plain, 0);
        let state = train(&toy_arch(), &cfg, &data, None, &holdout).unwrap();
        assert!(state.history.is_empty());
        assert!(state.best.is_none());
        let fresh = Classifier::init(toy_arch(), split_seed(cfg.seed, &[stream::INIT])).unwrap();
        assert_eq!(state.model.params(), fresh.params());
    }

    #[test]
    fn plain_training_separates_the_toy_mixture() {
        let (data, holdout) = toy_data(32);
        let cfg = tiny_train_config(ObjectiveKind::Plain, 30);
        let state = train(&toy_arch(), &cfg, &data, None, &holdout).unwrap();
        let final_acc = state.history.last().unwrap().clean_acc;
        assert!(final_acc >= 0.99, "clean accuracy {final_acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let (data, holdout) = toy_data(33);
        let out = generate(&DatasetSpec {
            kind: DatasetKind::Rings2d { n: 40 },
            seed: 9,
        })
        .unwrap();
        let cfg = tiny_train_config(
            ObjectiveKind::Ratio {
                eps_in: 0.05,
                eps_out: 0.08,
                lambda: 1.0,
                clean_in_fraction: 0.0,
            },
            3,
        );
        let a = train(&toy_arch(), &cfg, &data, Some(&out), &holdout).unwrap();
        let b = train(&toy_arch(), &cfg, &data, Some(&out), &holdout).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn at_with_zero_radius_matches_plain_trajectory() {
        let (data, holdout) = toy_data(34);
        let cfg_at = tiny_train_config(
            ObjectiveKind::AdversarialTraining { eps_in: 0.0 },
            3,
        );
        let cfg_plain = tiny_train_config(ObjectiveKind::Plain, 3);
        let at = train(&toy_arch(), &cfg_at, &data, None, &holdout).unwrap();
        let plain = train(&toy_arch(), &cfg_plain, &data, None, &holdout).unwrap();
        assert_eq!(at.model.params(), plain.model.params());
    }

    #[test]
    fn best_checkpoint_tracks_the_metric_maximum() {
        let (data, holdout) = toy_data(35);
        let cfg = tiny_train_config(ObjectiveKind::Plain, 8);
        let state = train(&toy_arch(), &cfg, &data, None, &holdout).unwrap();
        let best = state.best.as_ref().unwrap();
        let max_metric = state
            .history
            .iter()
            .map(|r| r.robust_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.metric, max_metric);
        // First epoch achieving the max is the one retained.
        let first = state
            .history
            .iter()
            .find(|r| r.robust_acc == max_metric)
            .unwrap();
        assert_eq!(best.epoch, first.epoch);
    }

    #[test]
    fn missing_out_stream_is_a_config_error() {
        let (data, holdout) = toy_data(36);
        let cfg = tiny_train_config(
            ObjectiveKind::Acet {
                eps_out: 0.1,
                lambda: 1.0,
            },
            1,
        );
        assert!(train(&toy_arch(), &cfg, &data, None, &holdout).is_err());
    }
}
