//! The four run-directory stages: train, calibrate, evaluate,
//! counterfactual. Every stage rederives its datasets and random streams
//! from the config's root seed, so a run directory plus its manifest fully
//! determines every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ratio_core::calibration::{calibrate, ece, BinningConfig};
use ratio_core::counterfactual::{
    emit_grid, feature_generation_ood, generate, trajectory_csv, CounterfactualRequest,
    CounterfactualResult,
};
use ratio_core::data::{generate as generate_dataset, Dataset};
use ratio_core::eval::{
    auc, clean_accuracy, confidence_radius_profile, max_confidences, mmc, robust_accuracy,
    worst_case_scores, MetricReport, OodMetrics, ProfileMode, RobustAccuracyEntry, ScoreSet,
};
use ratio_core::model::{checkpoint, Classifier};
use ratio_core::seed::split_seed;
use ratio_core::threat::{Norm, ThreatModel};
use ratio_core::vector::DenseVector;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::{config_hash, RunManifest};

/// Stage tags for deriving per-purpose seeds from the root seed. Dataset
/// streams additionally mix in each dataset spec's own seed, so two specs
/// in one config stay decorrelated even when their seed fields collide.
const STAGE_DATA: u64 = 0x20;
const STAGE_TRAIN: u64 = 0x21;
const STAGE_EVAL: u64 = 0x22;
const STAGE_COUNTERFACTUAL: u64 = 0x23;
const STAGE_SUBSAMPLE: u64 = 0x24;

/// Stable lowercase norm names matching the config's serde spelling.
pub fn norm_label(norm: Norm) -> &'static str {
    match norm {
        Norm::L2 => "l2",
        Norm::Linf => "linf",
    }
}

const MODEL_FILE: &str = "model.ckpt";
const EPOCHS_FILE: &str = "epochs.csv";
const CALIBRATION_FILE: &str = "calibration.json";
const METRICS_FILE: &str = "metrics.json";
const COUNTERFACTUAL_GRID_FILE: &str = "counterfactuals.ppm";
const COUNTERFACTUAL_TABLE_FILE: &str = "counterfactuals.csv";

/// All materialized data for one run.
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_ood: Option<Dataset>,
    pub eval_ood: BTreeMap<String, Dataset>,
}

pub fn materialize(config: &ExperimentConfig) -> Result<RunData> {
    let root = config.seed;
    let mut in_spec = config.data.in_dist.clone();
    in_spec.seed = split_seed(root, &[STAGE_DATA, 0, in_spec.seed]);
    let in_dist = generate_dataset(&in_spec)?;

    let mut split = config.data.split;
    split.seed = split_seed(root, &[STAGE_DATA, 1, split.seed]);
    let (train, val, test) = split.split(&in_dist)?;

    let train_ood = match &config.data.train_ood {
        Some(spec) => {
            let mut spec = spec.clone();
            spec.seed = split_seed(root, &[STAGE_DATA, 2, spec.seed]);
            Some(generate_dataset(&spec)?)
        }
        None => None,
    };

    let mut eval_ood = BTreeMap::new();
    for (j, (name, spec)) in config.data.eval_ood.iter().enumerate() {
        let mut spec = spec.clone();
        spec.seed = split_seed(root, &[STAGE_DATA, 3, j as u64, spec.seed]);
        eval_ood.insert(name.clone(), generate_dataset(&spec)?);
    }

    Ok(RunData {
        train,
        val,
        test,
        train_ood,
        eval_ood,
    })
}

fn load_model(manifest: &RunManifest, out_dir: &Path) -> Result<Classifier> {
    let path = manifest.artifact_path(out_dir, "model", "train")?;
    Ok(checkpoint::load(&path)?)
}

/// Warn when a downstream stage runs with a config that differs from the
/// training-time one; the manifest keeps the training config as provenance.
fn check_hash(manifest: &RunManifest, config: &ExperimentConfig) {
    let current = config_hash(config);
    if current != manifest.config_hash {
        eprintln!(
            "warning: config differs from the one recorded at training time; \
             artifacts in {} may mix settings",
            config.out_dir.display()
        );
    }
}

fn require_labels<'a>(data: &'a Dataset, what: &str) -> Result<&'a [usize]> {
    data.labels
        .as_deref()
        .ok_or_else(|| CliError::Runtime(format!("{what} is unlabeled")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    json.push('\n');
    write_text(path, &json)
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let data = materialize(config)?;
    let train_cfg = config
        .train
        .to_train_config(split_seed(config.seed, &[STAGE_TRAIN]));
    let state = ratio_core::train::train(
        &config.model,
        &train_cfg,
        &data.train,
        data.train_ood.as_ref(),
        &data.val,
    )?;
    let best = state.best_model();

    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;
    checkpoint::save(&best, &out_dir.join(MODEL_FILE))?;

    let mut csv = String::from("epoch,train_loss,clean_acc,robust_acc\n");
    for row in &state.history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.clean_acc, row.robust_acc
        ));
    }
    write_text(&out_dir.join(EPOCHS_FILE), &csv)?;

    let mut manifest = RunManifest::new(config);
    manifest.record_artifact("model", MODEL_FILE);
    manifest.record_artifact("epochs", EPOCHS_FILE);
    manifest.save(out_dir)?;

    match &state.best {
        Some(best) => println!(
            "trained {} epochs; kept epoch {} (holdout metric {:.4})",
            state.epochs_run, best.epoch, best.metric
        ),
        None => println!("trained {} epochs; kept final parameters", state.epochs_run),
    }
    println!("wrote {}", out_dir.join(MODEL_FILE).display());
    Ok(())
}

pub fn cmd_calibrate(config: &ExperimentConfig) -> Result<()> {
    let out_dir = &config.out_dir;
    let mut manifest = RunManifest::load(out_dir)?;
    check_hash(&manifest, config);
    let model = load_model(&manifest, out_dir)?;

    let data = materialize(config)?;
    let labels = require_labels(&data.val, "validation split")?;
    let binning = BinningConfig::new(config.calibration.validation_bins, model.classes())?;
    let report = calibrate(
        &model,
        &data.val.points,
        labels,
        &binning,
        &config.calibration.grid,
    )?;

    write_json(&out_dir.join(CALIBRATION_FILE), &report)?;
    manifest.temperature = Some(report.temperature);
    manifest.record_artifact("calibration", CALIBRATION_FILE);
    manifest.save(out_dir)?;

    println!(
        "fitted temperature {:.4}; validation ECE {:.4} -> {:.4}",
        report.temperature, report.ece_before, report.ece_after
    );
    Ok(())
}

pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<()> {
    let out_dir = &config.out_dir;
    let mut manifest = RunManifest::load(out_dir)?;
    check_hash(&manifest, config);
    let model = load_model(&manifest, out_dir)?;

    if config.data.eval_ood.is_empty() {
        return Err(CliError::Config(
            "data.eval_ood: evaluate needs at least one out-distribution set".into(),
        ));
    }
    let temperature = match manifest.temperature {
        Some(t) => t,
        None => {
            eprintln!("warning: no fitted temperature in manifest; evaluating at T = 1");
            1.0
        }
    };

    let data = materialize(config)?;
    let test_labels = require_labels(&data.test, "test split")?;
    let root = config.seed;
    let section = &config.evaluation;

    let clean_acc = clean_accuracy(&model, &data.test)?;

    let mut robust_entries = Vec::new();
    for (k, tm) in section
        .resolved_threat_models(&config.train.objective)?
        .iter()
        .enumerate()
    {
        let attack = section.resolved_attack(tm.epsilon);
        let accuracy = robust_accuracy(
            &model,
            &data.test,
            tm,
            &attack,
            split_seed(root, &[STAGE_EVAL, 0, k as u64]),
        )?;
        robust_entries.push(RobustAccuracyEntry {
            norm: tm.norm,
            epsilon: tm.epsilon,
            accuracy,
        });
    }

    let test_conf = max_confidences(&model, &data.test.points, temperature)?;
    let correct: Vec<bool> = data
        .test
        .points
        .iter()
        .zip(test_labels)
        .map(|(x, &y)| Ok(model.predicted_class(x)? == y))
        .collect::<Result<_>>()?;
    let test_binning = BinningConfig::new(config.calibration.test_bins, model.classes())?;
    let test_ece = ece(&test_conf, &correct, &test_binning)?;

    let wc_eps = section.resolved_wc_epsilon(&config.train.objective)?;
    let wc_tm = ThreatModel::l2(wc_eps)?;
    let wc_attack = section.resolved_attack(wc_eps);
    let mut per_ood = BTreeMap::new();
    for (j, (name, full_set)) in data.eval_ood.iter().enumerate() {
        let set = if section.ood_sample_size > 0 {
            full_set.subsample(
                section.ood_sample_size,
                split_seed(root, &[STAGE_SUBSAMPLE, j as u64]),
            )
        } else {
            full_set.clone()
        };
        let out_conf = max_confidences(&model, &set.points, temperature)?;
        let set_auc = auc(&ScoreSet::new(test_conf.clone(), out_conf)?);
        let wc_scores = worst_case_scores(
            &model,
            &set.points,
            &wc_tm,
            &wc_attack,
            temperature,
            section.exhaustive_wc,
            split_seed(root, &[STAGE_EVAL, 1, j as u64]),
        )?;
        let wc_auc = auc(&ScoreSet::new(test_conf.clone(), wc_scores)?);
        let set_mmc = mmc(&model, &set.points, temperature)?;
        per_ood.insert(
            name.clone(),
            OodMetrics {
                auc: set_auc,
                wc_auc,
                mmc: set_mmc,
            },
        );
    }

    let report = MetricReport::new(clean_acc, robust_entries, test_ece, temperature, per_ood)?;
    write_json(&out_dir.join(METRICS_FILE), &report)?;
    manifest.record_artifact("metrics", METRICS_FILE);

    if !section.profile_radii.is_empty() {
        let mut targets: Vec<(String, &Dataset, ProfileMode)> =
            vec![("test".into(), &data.test, ProfileMode::TrueLabel)];
        for (name, set) in &data.eval_ood {
            targets.push((name.clone(), set, ProfileMode::MaxConfidence));
        }
        for (j, (name, set, mode)) in targets.iter().enumerate() {
            let sampled = if section.profile_sample_size > 0 {
                set.subsample(
                    section.profile_sample_size,
                    split_seed(root, &[STAGE_SUBSAMPLE, 100 + j as u64]),
                )
            } else {
                (*set).clone()
            };
            let max_radius = section.profile_radii.last().copied().unwrap_or(0.0);
            let attack = section.resolved_attack(max_radius);
            let rows = confidence_radius_profile(
                &model,
                &sampled,
                &section.profile_radii,
                *mode,
                &attack,
                temperature,
                split_seed(root, &[STAGE_EVAL, 2, j as u64]),
            )?;
            let mut csv = String::from("radius,mean_confidence\n");
            for row in rows {
                csv.push_str(&format!("{},{}\n", row.radius, row.mean_confidence));
            }
            let file = format!("profile_{name}.csv");
            write_text(&out_dir.join(&file), &csv)?;
            manifest.record_artifact(&format!("profile_{name}"), &file);
        }
    }

    manifest.save(out_dir)?;

    println!("clean accuracy {:.4}", report.clean_acc);
    for entry in &report.robust_acc {
        println!(
            "robust accuracy @ {} {}: {:.4}",
            norm_label(entry.norm),
            entry.epsilon,
            entry.accuracy
        );
    }
    println!("test ECE {:.4} at T = {:.4}", report.ece, report.temperature);
    for (name, m) in &report.per_ood {
        println!(
            "{name}: AUC {:.4}, worst-case AUC {:.4}, MMC {:.4}",
            m.auc, m.wc_auc, m.mmc
        );
    }
    Ok(())
}

pub fn cmd_counterfactual(config: &ExperimentConfig) -> Result<()> {
    if config.counterfactual.requests.is_empty() {
        return Err(CliError::Config(
            "counterfactual.requests: no requests given".into(),
        ));
    }
    let out_dir = &config.out_dir;
    let mut manifest = RunManifest::load(out_dir)?;
    check_hash(&manifest, config);
    let model = load_model(&manifest, out_dir)?;

    let section = &config.counterfactual;
    let mut results: Vec<CounterfactualResult> = Vec::new();
    for (i, req) in section.requests.iter().enumerate() {
        let seed = split_seed(config.seed, &[STAGE_COUNTERFACTUAL, i as u64]);
        let x = DenseVector::new(req.x.clone());
        let result = match req.target {
            Some(target) => {
                let request = CounterfactualRequest {
                    x,
                    target,
                    budgets: section.budgets.clone(),
                    attack: section.attack.clone(),
                    seed,
                };
                generate(&model, &request)?
            }
            None => feature_generation_ood(&model, &x, &section.budgets, &section.attack, seed)?,
        };
        let last = result.steps.last().expect("non-empty budget grid");
        println!(
            "request {i}: source class {} -> target {}; confidence {:.4} -> {:.4} at budget {}",
            result.source, result.target, result.original_confidence, last.confidence, last.budget
        );
        results.push(result);
    }

    match &section.image_shape {
        Some(shape) => {
            let grid_path = out_dir.join(COUNTERFACTUAL_GRID_FILE);
            let sidecar = emit_grid(&results, shape, &grid_path)?;
            manifest.record_artifact("counterfactual_grid", COUNTERFACTUAL_GRID_FILE);
            let sidecar_name = sidecar
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| COUNTERFACTUAL_TABLE_FILE.to_string());
            manifest.record_artifact("counterfactual_annotations", &sidecar_name);
            println!("wrote {}", grid_path.display());
        }
        None => {
            let table = trajectory_csv(&results)?;
            let path = out_dir.join(COUNTERFACTUAL_TABLE_FILE);
            write_text(&path, &table)?;
            manifest.record_artifact("counterfactual_table", COUNTERFACTUAL_TABLE_FILE);
            println!("wrote {}", path.display());
        }
    }
    manifest.save(out_dir)?;
    Ok(())
}
