//! Evaluation metrics: clean and robust accuracy, OOD discrimination AUC
//! (clean and worst-case), mean maximal confidence, and confidence-radius
//! profiles.
//!
//! The OOD feature is always the max-softmax confidence `max_k p̂_k(x, T)`.
//! Worst-case variants replace each out-distribution score with that
//! statistic at the best point an attacker finds inside an l2 ball, so they
//! can only shrink the AUC. Radius sweeps warm-start each point from the
//! previous radius's best iterate, which makes the reported curves exactly
//! monotone in the radius.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::{
    pgd_restarts, worst_case_confidence, AttackLoss, PgdConfig, Select,
};
use crate::data::Dataset;
use crate::model::Classifier;
use crate::prob::softmax;
use crate::seed::split_seed;
use crate::threat::{Norm, ThreatModel};
use crate::vector::DenseVector;
use crate::{Error, Result};

/// Seed tag separating the warm-started continuation run from the fresh
/// restarts at the same radius.
const WARM_TAG: u64 = 0x0b;

fn require_labels<'a>(data: &'a Dataset, what: &str) -> Result<&'a [usize]> {
    data.labels
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("{what} needs a labeled set")))
}

fn require_non_empty(data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid(format!("{what} needs a non-empty set")));
    }
    Ok(())
}

/// Fraction of points whose argmax prediction matches the label.
pub fn clean_accuracy(model: &Classifier, data: &Dataset) -> Result<f64> {
    require_non_empty(data, "clean accuracy")?;
    let labels = require_labels(data, "clean accuracy")?;
    let mut hits = 0usize;
    for (x, &y) in data.points.iter().zip(labels) {
        if model.predicted_class(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// `max_k p̂_k(x, T)` per point.
pub fn max_confidences(
    model: &Classifier,
    points: &[DenseVector],
    temperature: f64,
) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|x| {
            let logits = model.forward(x.as_slice())?;
            Ok(softmax(&logits, temperature)?.max_confidence())
        })
        .collect()
}

/// Mean maximal confidence over a point set at the given temperature.
pub fn mmc(model: &Classifier, points: &[DenseVector], temperature: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("mmc needs a non-empty set"));
    }
    let scores = max_confidences(model, points, temperature)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean maximal confidence at the attacked points (the same statistic the
/// worst-case AUC uses for its out-scores).
#[allow(clippy::too_many_arguments)]
pub fn mmc_attacked(
    model: &Classifier,
    points: &[DenseVector],
    tm: &ThreatModel,
    cfg: &PgdConfig,
    temperature: f64,
    exhaustive: bool,
    seed: u64,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("mmc needs a non-empty set"));
    }
    let scores = worst_case_scores(model, points, tm, cfg, temperature, exhaustive, seed)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// In- and out-distribution confidence scores for one discrimination task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl ScoreSet {
    /// Both sides must be non-empty with finite scores in `[0, 1]`
    /// (max-softmax sources additionally guarantee ≥ 1/K).
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        if in_scores.is_empty() || out_scores.is_empty() {
            return Err(Error::invalid("score set needs both sides non-empty"));
        }
        for (side, scores) in [("in", &in_scores), ("out", &out_scores)] {
            for &s in scores.iter() {
                if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                    return Err(Error::invalid(format!(
                        "{side}-score {s} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(ScoreSet {
            in_scores,
            out_scores,
        })
    }
}

/// Mann–Whitney AUC with half credit for ties, computed via midranks:
/// `(Σ_pairs [in > out] + ½[in = out]) / (n_in·n_out)`. Midranks are
/// half-integers, so the rank sum is exact and the result equals the
/// brute-force pairwise statistic bit for bit.
pub fn auc(scores: &ScoreSet) -> f64 {
    let n_in = scores.in_scores.len();
    let n_out = scores.out_scores.len();
    let mut combined: Vec<(f64, bool)> = scores
        .in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.out_scores.iter().map(|&s| (s, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    let mut rank_sum_in = 0.0f64;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j < combined.len() && combined[j].0 == combined[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank (i+1 + j)/2.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let in_count = combined[i..j].iter().filter(|e| e.1).count();
        rank_sum_in += in_count as f64 * midrank;
        i = j;
    }
    let u = rank_sum_in - (n_in * (n_in + 1)) as f64 / 2.0;
    u / (n_in as f64 * n_out as f64)
}

/// Worst-case max-softmax score per out-distribution point: the confidence
/// statistic evaluated at the attack's best iterate.
pub fn worst_case_scores(
    model: &Classifier,
    points: &[DenseVector],
    tm: &ThreatModel,
    cfg: &PgdConfig,
    temperature: f64,
    exhaustive: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let result = worst_case_confidence(
                model,
                x,
                tm,
                cfg,
                temperature,
                exhaustive,
                split_seed(seed, &[i as u64]),
            )?;
            let logits = model.forward(result.z_best.as_slice())?;
            Ok(softmax(&logits, temperature)?.max_confidence())
        })
        .collect()
}

/// AUC after the confidence attack on the out-distribution side; in-scores
/// stay clean. Temperature 1, predicted-class targeting.
pub fn worst_case_auc(
    model: &Classifier,
    in_set: &Dataset,
    ood_set: &Dataset,
    tm: &ThreatModel,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<f64> {
    require_non_empty(in_set, "worst-case auc")?;
    require_non_empty(ood_set, "worst-case auc")?;
    let in_scores = max_confidences(model, &in_set.points, 1.0)?;
    let out_scores = worst_case_scores(model, &ood_set.points, tm, cfg, 1.0, false, seed)?;
    Ok(auc(&ScoreSet::new(in_scores, out_scores)?))
}

/// Robust accuracy: the fraction of points that are clean-correct and for
/// which the restarted CW attack fails to reach a positive margin. Clean
/// mistakes count as non-robust.
pub fn robust_accuracy(
    model: &Classifier,
    data: &Dataset,
    tm: &ThreatModel,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<f64> {
    require_non_empty(data, "robust accuracy")?;
    let labels = require_labels(data, "robust accuracy")?;
    let mut robust = 0usize;
    for (i, (x, &y)) in data.points.iter().zip(labels).enumerate() {
        if model.predicted_class(x)? != y {
            continue;
        }
        let result = pgd_restarts(
            model,
            x,
            tm,
            &AttackLoss::CwLogit { label: y },
            cfg,
            split_seed(seed, &[i as u64]),
        )?;
        if result.loss_best <= 0.0 {
            robust += 1;
        }
    }
    Ok(robust as f64 / data.len() as f64)
}

/// Robust accuracy at each radius of an increasing grid, warm-starting each
/// point from its previous best adversary. A point that flips at some
/// radius stays flipped at every larger one (the smaller ball is nested),
/// so the returned curve is non-increasing.
pub fn robust_accuracy_curve(
    model: &Classifier,
    data: &Dataset,
    norm: Norm,
    epsilons: &[f64],
    cfg: &PgdConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    require_non_empty(data, "robust accuracy")?;
    let labels = require_labels(data, "robust accuracy")?;
    if epsilons.is_empty() {
        return Err(Error::invalid("radius grid is empty"));
    }
    if !epsilons.windows(2).all(|w| w[0] < w[1]) || epsilons[0] < 0.0 {
        return Err(Error::invalid("radii must be non-negative and strictly increasing"));
    }
    cfg.validate()?;

    let n = data.len();
    let mut flipped = vec![false; n];
    let mut warm: Vec<DenseVector> = data.points.clone();
    for (i, (x, &y)) in data.points.iter().zip(labels).enumerate() {
        if model.predicted_class(x)? != y {
            flipped[i] = true;
        }
    }

    let mut curve = Vec::with_capacity(epsilons.len());
    for (k, &eps) in epsilons.iter().enumerate() {
        let tm = ThreatModel::new(norm, eps)?;
        for (i, (x, &y)) in data.points.iter().zip(labels).enumerate() {
            if flipped[i] {
                continue;
            }
            let point_seed = split_seed(seed, &[k as u64, i as u64]);
            let loss = AttackLoss::CwLogit { label: y };
            let fresh = pgd_restarts(model, x, &tm, &loss, cfg, point_seed)?;
            let mut best = fresh;
            if k > 0 {
                let cont = crate::attack::run_pgd(
                    model,
                    x,
                    &warm[i],
                    &tm,
                    &loss,
                    Select::GradLoss,
                    cfg,
                    split_seed(point_seed, &[WARM_TAG]),
                )?;
                if cont.loss_best > best.loss_best {
                    best = cont;
                }
            }
            if best.loss_best > 0.0 {
                flipped[i] = true;
            }
            warm[i] = best.z_best;
        }
        let robust = flipped.iter().filter(|&&f| !f).count();
        curve.push(robust as f64 / n as f64);
    }
    Ok(curve)
}

/// What a confidence-radius profile tracks per point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Confidence in the true label, minimized by the attacker; requires
    /// labels and yields a non-increasing column.
    TrueLabel,
    /// Maximal confidence over classes, maximized by the attacker toward
    /// the clean prediction; yields a non-decreasing column.
    MaxConfidence,
}

/// One row of a confidence-radius profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub radius: f64,
    pub mean_confidence: f64,
}

/// Mean tracked confidence per l2 radius, warm-started across the grid.
/// The selection score inside the attack is exactly the recorded statistic,
/// so each point's column is monotone and so is the mean.
#[allow(clippy::too_many_arguments)]
pub fn confidence_radius_profile(
    model: &Classifier,
    data: &Dataset,
    radii: &[f64],
    mode: ProfileMode,
    cfg: &PgdConfig,
    temperature: f64,
    seed: u64,
) -> Result<Vec<ProfileRow>> {
    require_non_empty(data, "confidence profile")?;
    if radii.is_empty() {
        return Err(Error::invalid("radius grid is empty"));
    }
    if !radii.windows(2).all(|w| w[0] < w[1]) || radii[0] < 0.0 {
        return Err(Error::invalid("radii must be non-negative and strictly increasing"));
    }
    cfg.validate()?;

    let n = data.len();
    let labels = match mode {
        ProfileMode::TrueLabel => Some(require_labels(data, "true-label profile")?),
        ProfileMode::MaxConfidence => None,
    };

    // Per-point attack setup: tracked class and the loss steering it.
    let mut tracked = Vec::with_capacity(n);
    for (i, x) in data.points.iter().enumerate() {
        let class = match labels {
            Some(ys) => ys[i],
            None => model.predicted_class(x)?,
        };
        tracked.push(class);
    }

    let confidence_at = |z: &DenseVector, class: usize| -> Result<f64> {
        let logits = model.forward(z.as_slice())?;
        let probs = softmax(&logits, temperature)?;
        Ok(match mode {
            ProfileMode::TrueLabel => probs.as_slice()[class],
            ProfileMode::MaxConfidence => probs.max_confidence(),
        })
    };

    let mut warm: Vec<DenseVector> = data.points.clone();
    let mut rows = Vec::with_capacity(radii.len());
    for (k, &radius) in radii.iter().enumerate() {
        let mut sum = 0.0;
        if radius == 0.0 {
            for (x, &class) in data.points.iter().zip(&tracked) {
                sum += confidence_at(x, class)?;
            }
        } else {
            let tm = ThreatModel::l2(radius)?;
            for (i, x) in data.points.iter().enumerate() {
                let class = tracked[i];
                let (grad_loss, select) = match mode {
                    ProfileMode::TrueLabel => (
                        AttackLoss::CwLogit { label: class },
                        Select::NegLogConfidence { class, temperature },
                    ),
                    ProfileMode::MaxConfidence => (
                        AttackLoss::TargetConfidence { class },
                        Select::MaxLogConfidence { temperature },
                    ),
                };
                let result = crate::attack::run_pgd(
                    model,
                    x,
                    &warm[i],
                    &tm,
                    &grad_loss,
                    select,
                    cfg,
                    split_seed(seed, &[k as u64, i as u64]),
                )?;
                warm[i] = result.z_best;
                sum += confidence_at(&warm[i], class)?;
            }
        }
        rows.push(ProfileRow {
            radius,
            mean_confidence: sum / n as f64,
        });
    }
    Ok(rows)
}

/// Discrimination metrics against one out-distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auc: f64,
    pub wc_auc: f64,
    pub mmc: f64,
}

/// Robust accuracy under one threat model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustAccuracyEntry {
    pub norm: Norm,
    pub epsilon: f64,
    pub accuracy: f64,
}

/// The full metric bundle for one model: accuracy, robust accuracy per
/// threat model, test-set ECE, per-OOD-set discrimination metrics, and
/// their means. Construction validates ranges and `wc_auc ≤ auc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clean_acc: f64,
    pub robust_acc: Vec<RobustAccuracyEntry>,
    pub ece: f64,
    /// Softmax temperature all confidences were evaluated at.
    pub temperature: f64,
    pub per_ood: BTreeMap<String, OodMetrics>,
    pub mean_auc: f64,
    pub mean_wc_auc: f64,
    pub mean_mmc: f64,
}

impl MetricReport {
    pub fn new(
        clean_acc: f64,
        robust_acc: Vec<RobustAccuracyEntry>,
        ece: f64,
        temperature: f64,
        per_ood: BTreeMap<String, OodMetrics>,
    ) -> Result<Self> {
        let rate = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
            Ok(())
        };
        rate("clean_acc", clean_acc)?;
        rate("ece", ece)?;
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        for entry in &robust_acc {
            rate("robust_acc", entry.accuracy)?;
            if !(entry.epsilon >= 0.0) {
                return Err(Error::invalid("robust accuracy epsilon must be non-negative"));
            }
        }
        if per_ood.is_empty() {
            return Err(Error::invalid("metric report needs at least one OOD set"));
        }
        for (name, m) in &per_ood {
            rate(&format!("{name}.auc"), m.auc)?;
            rate(&format!("{name}.wc_auc"), m.wc_auc)?;
            rate(&format!("{name}.mmc"), m.mmc)?;
            if m.wc_auc > m.auc {
                return Err(Error::invalid(format!(
                    "{name}: worst-case AUC {} exceeds clean AUC {}",
                    m.wc_auc, m.auc
                )));
            }
        }
        let n = per_ood.len() as f64;
        let mean_auc = per_ood.values().map(|m| m.auc).sum::<f64>() / n;
        let mean_wc_auc = per_ood.values().map(|m| m.wc_auc).sum::<f64>() / n;
        let mean_mmc = per_ood.values().map(|m| m.mmc).sum::<f64>() / n;
        Ok(MetricReport {
            clean_acc,
            robust_acc,
            ece,
            temperature,
            per_ood,
            mean_auc,
            mean_wc_auc,
            mean_mmc,
        })
    }
}
