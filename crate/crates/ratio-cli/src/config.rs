//! Experiment configuration: a single JSON document driving every
//! subcommand. Unknown keys are rejected at the top level of each section;
//! nested domain types keep their own validation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ratio_core::attack::PgdConfig;
use ratio_core::calibration::TemperatureGrid;
use ratio_core::counterfactual::{ImageShape, DEFAULT_BUDGETS, DEFAULT_STEPS};
use ratio_core::data::{DatasetKind, DatasetSpec, SplitSpec};
use ratio_core::model::Architecture;
use ratio_core::optim::OptimizerConfig;
use ratio_core::threat::ThreatModel;
use ratio_core::train::{EarlyStopConfig, ObjectiveKind, StepRamp, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Root seed; every stage derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: Architecture,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub counterfactual: CounterfactualSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled in-distribution source; split below carves train/val/test.
    pub in_dist: DatasetSpec,
    pub split: SplitSpec,
    /// Out-distribution stream seen during training, if the objective uses one.
    #[serde(default)]
    pub train_ood: Option<DatasetSpec>,
    /// Held-out sets scored at evaluation time, keyed by display name.
    #[serde(default)]
    pub eval_ood: BTreeMap<String, DatasetSpec>,
}

/// Mirror of the training options with the seed removed: the runner derives
/// the training seed from the root seed so `--seed` reruns everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub objective: ObjectiveKind,
    pub epochs: usize,
    pub in_batch: usize,
    pub out_batch: usize,
    pub optimizer: OptimizerConfig,
    pub attack_in: PgdConfig,
    pub attack_out: PgdConfig,
    pub out_step_ramp: StepRamp,
    pub early_stop: EarlyStopConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            objective: base.objective,
            epochs: base.epochs,
            in_batch: base.in_batch,
            out_batch: base.out_batch,
            optimizer: base.optimizer,
            attack_in: zero_step(base.attack_in),
            attack_out: zero_step(base.attack_out),
            out_step_ramp: base.out_step_ramp,
            // The checkpoint choice is only as good as this attack; a weak
            // default saturates the holdout metric within a few epochs and
            // keeps an underfit model.
            early_stop: EarlyStopConfig {
                attack: PgdConfig {
                    steps: 30,
                    step_size: 0.0,
                    restarts: 6,
                    ..PgdConfig::default()
                },
                epsilon: base.early_stop.epsilon,
            },
        }
    }
}

/// Marks a step size as "derive from the radius", the same `0.0` sentinel
/// the evaluation section uses.
fn zero_step(attack: PgdConfig) -> PgdConfig {
    PgdConfig {
        step_size: 0.0,
        ..attack
    }
}

fn resolve_step(attack: &PgdConfig, epsilon: f64, fraction: f64) -> PgdConfig {
    let mut attack = attack.clone();
    if attack.step_size == 0.0 {
        attack.step_size = if epsilon > 0.0 { epsilon * fraction } else { 0.1 };
    }
    attack
}

impl TrainSection {
    /// Concrete training config: `step_size: 0` resolves to radius/4 for
    /// the in-attack and radius/8 for the out- and early-stop attacks
    /// (0.1 when the radius is 0 and the attack is inert anyway).
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        let es_epsilon = self
            .early_stop
            .epsilon
            .unwrap_or_else(|| self.objective.eps_in());
        TrainConfig {
            objective: self.objective.clone(),
            epochs: self.epochs,
            in_batch: self.in_batch,
            out_batch: self.out_batch,
            optimizer: self.optimizer.clone(),
            attack_in: resolve_step(&self.attack_in, self.objective.eps_in(), 0.25),
            attack_out: resolve_step(&self.attack_out, self.objective.eps_out(), 0.125),
            out_step_ramp: self.out_step_ramp.clone(),
            early_stop: EarlyStopConfig {
                attack: resolve_step(&self.early_stop.attack, es_epsilon, 0.125),
                epsilon: self.early_stop.epsilon,
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Reliability bins for the temperature fit on the validation split.
    pub validation_bins: usize,
    /// Reliability bins for the test-set ECE reported by `evaluate`.
    pub test_bins: usize,
    pub grid: TemperatureGrid,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            validation_bins: 10,
            test_bins: 15,
            grid: TemperatureGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Threat models for robust accuracy; empty means one l2 ball at the
    /// objective's in-distribution radius (0 for clean-only objectives).
    pub threat_models: Vec<ThreatModel>,
    /// Evaluation attack; a zero step size resolves to radius/8 per run.
    pub attack: PgdConfig,
    /// Radius for worst-case OOD confidence; `null` means the objective's
    /// out-distribution radius, falling back to the first threat model.
    pub wc_epsilon: Option<f64>,
    /// Upper bound on points per OOD set (0 keeps every point).
    pub ood_sample_size: usize,
    /// Also enumerate box corners in the worst-case confidence search.
    pub exhaustive_wc: bool,
    /// Strictly increasing radii for confidence-radius profiles; empty skips.
    pub profile_radii: Vec<f64>,
    /// Upper bound on points per profile column (0 keeps every point).
    pub profile_sample_size: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            threat_models: Vec::new(),
            attack: PgdConfig {
                steps: 100,
                step_size: 0.0,
                restarts: 5,
                ..PgdConfig::default()
            },
            wc_epsilon: None,
            ood_sample_size: 256,
            exhaustive_wc: false,
            profile_radii: Vec::new(),
            profile_sample_size: 32,
        }
    }
}

impl EvaluationSection {
    /// Threat models with the empty-list default applied.
    pub fn resolved_threat_models(&self, objective: &ObjectiveKind) -> Result<Vec<ThreatModel>> {
        if !self.threat_models.is_empty() {
            return Ok(self.threat_models.clone());
        }
        Ok(vec![ThreatModel::l2(objective.eps_in()).map_err(core_config_error)?])
    }

    pub fn resolved_wc_epsilon(&self, objective: &ObjectiveKind) -> Result<f64> {
        if let Some(eps) = self.wc_epsilon {
            return Ok(eps);
        }
        let fallback = objective.eps_out();
        if fallback > 0.0 {
            return Ok(fallback);
        }
        Ok(self.resolved_threat_models(objective)?[0].epsilon)
    }

    /// The configured attack with a concrete step size for the given radius.
    pub fn resolved_attack(&self, epsilon: f64) -> PgdConfig {
        let mut attack = self.attack.clone();
        if attack.step_size == 0.0 {
            attack.step_size = if epsilon > 0.0 { epsilon / 8.0 } else { 0.1 };
        }
        attack
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub x: Vec<f64>,
    /// Class whose confidence the generator maximizes; `null` targets the
    /// model's own prediction (out-distribution feature generation).
    #[serde(default)]
    pub target: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualSection {
    pub requests: Vec<RequestSpec>,
    /// Strictly increasing l2 budgets; the clean point is always prepended.
    pub budgets: Vec<f64>,
    pub attack: PgdConfig,
    /// Present when inputs are images: emits a PPM grid plus annotation CSV
    /// instead of a trajectory CSV.
    pub image_shape: Option<ImageShape>,
}

impl Default for CounterfactualSection {
    fn default() -> Self {
        CounterfactualSection {
            requests: Vec::new(),
            budgets: DEFAULT_BUDGETS.to_vec(),
            attack: PgdConfig::default().with_steps(DEFAULT_STEPS),
            image_shape: None,
        }
    }
}

/// Input to `ratio report`: manifests to tabulate plus optional thresholds
/// that flag failing cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_report_dir")]
    pub out_dir: PathBuf,
}

fn default_report_dir() -> PathBuf {
    PathBuf::from(".")
}

/// Bounds checked per report cell; violations are flagged, never fatal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub min_clean_acc: Option<f64>,
    pub min_robust_acc: Option<f64>,
    pub max_ece: Option<f64>,
    pub min_auc: Option<f64>,
    pub min_wc_auc: Option<f64>,
    pub max_mmc: Option<f64>,
}

fn core_config_error(err: ratio_core::Error) -> CliError {
    CliError::Config(err.to_string())
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::from_json(path, e))
}

impl ExperimentConfig {
    /// Loads a config from JSON; a run manifest is also accepted, in which
    /// case its embedded resolved config is extracted, so any manifest can
    /// re-drive downstream stages.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        // A run directory stands for its manifest, mirroring RunManifest::load.
        let resolved;
        let path = if path.is_dir() {
            resolved = path.join(crate::manifest::MANIFEST_FILE);
            resolved.as_path()
        } else {
            path
        };
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let probe: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        if probe.get("schema").is_some() && probe.get("config").is_some() {
            let manifest: crate::manifest::RunManifest = parse_json(path, &text)?;
            return Ok(manifest.config);
        }
        parse_json(path, &text)
    }

    /// Applies command-line overrides. The override order matters: the seed
    /// feeds every derived stream, the output directory only placement.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(out) = out {
            self.out_dir = out.to_path_buf();
        }
    }

    /// Structural validation beyond what serde enforces. Named keys in the
    /// diagnostics follow the JSON layout.
    pub fn validate(&self) -> Result<()> {
        self.validate_dataset("data.in_dist", &self.data.in_dist)?;
        if let Some(ood) = &self.data.train_ood {
            self.validate_dataset("data.train_ood", ood)?;
        }
        for (name, spec) in &self.data.eval_ood {
            self.validate_dataset(&format!("data.eval_ood.{name}"), spec)?;
        }
        self.data
            .split
            .validate()
            .map_err(|e| CliError::Config(format!("data.split: {e}")))?;
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let train_cfg = self.train.to_train_config(0);
        train_cfg
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.train.objective.uses_out_stream() && self.data.train_ood.is_none() {
            return Err(CliError::Config(
                "data.train_ood: objective trains on an out-distribution stream but no spec is given"
                    .into(),
            ));
        }
        if self.calibration.validation_bins == 0 || self.calibration.test_bins == 0 {
            return Err(CliError::Config("calibration: bin counts must be positive".into()));
        }
        self.calibration
            .grid
            .validate()
            .map_err(|e| CliError::Config(format!("calibration.grid: {e}")))?;
        for tm in &self.evaluation.threat_models {
            if !(tm.epsilon >= 0.0) {
                return Err(CliError::Config(format!(
                    "evaluation.threat_models: radius {} is negative",
                    tm.epsilon
                )));
            }
        }
        if let Some(eps) = self.evaluation.wc_epsilon {
            if !(eps >= 0.0) {
                return Err(CliError::Config(format!(
                    "evaluation.wc_epsilon: radius {eps} is negative"
                )));
            }
        }
        if !self.evaluation.profile_radii.is_empty() {
            let radii = &self.evaluation.profile_radii;
            if radii[0] < 0.0 || !radii.windows(2).all(|w| w[0] < w[1]) {
                return Err(CliError::Config(
                    "evaluation.profile_radii: radii must be non-negative and strictly increasing"
                        .into(),
                ));
            }
        }
        for (i, req) in self.counterfactual.requests.iter().enumerate() {
            if req.x.len() != self.model.input_dim() {
                return Err(CliError::Config(format!(
                    "counterfactual.requests[{i}].x: got {} coordinates, model expects {}",
                    req.x.len(),
                    self.model.input_dim()
                )));
            }
            let tol = ratio_core::threat::MEMBERSHIP_TOL;
            if req.x.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) {
                return Err(CliError::Config(format!(
                    "counterfactual.requests[{i}].x: coordinates must lie in [0, 1]"
                )));
            }
            if let Some(target) = req.target {
                if target >= self.model.classes() {
                    return Err(CliError::Config(format!(
                        "counterfactual.requests[{i}].target: class {target} out of range (model has {})",
                        self.model.classes()
                    )));
                }
            }
        }
        if let Some(shape) = &self.counterfactual.image_shape {
            shape
                .validate()
                .map_err(|e| CliError::Config(format!("counterfactual.image_shape: {e}")))?;
            if shape.dim() != self.model.input_dim() {
                return Err(CliError::Config(format!(
                    "counterfactual.image_shape: {}x{}x{} has {} values, model expects {}",
                    shape.height,
                    shape.width,
                    shape.channels,
                    shape.dim(),
                    self.model.input_dim()
                )));
            }
        }
        Ok(())
    }

    fn validate_dataset(&self, key: &str, spec: &DatasetSpec) -> Result<()> {
        if let DatasetKind::RawTensorDir { path } = &spec.kind {
            if !path.is_dir() {
                return Err(CliError::Config(format!(
                    "{key}.path: dataset directory does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

impl ReportConfig {
    pub fn load(path: &Path) -> Result<ReportConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ReportConfig = parse_json(path, &text)?;
        if config.manifests.is_empty() {
            return Err(CliError::Config("manifests: need at least one".into()));
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "out_dir": "runs/test",
            "seed": 7,
            "data": {
                "in_dist": {
                    "kind": "gaussian_mixture2d",
                    "classes": 2,
                    "means": [[-1.0, 0.0], [1.0, 0.0]],
                    "sigma": 0.1,
                    "n": 40,
                    "seed": 1
                },
                "split": { "train": 0.5, "val": 0.25, "test": 0.25, "seed": 2 }
            },
            "model": { "kind": "mlp", "input_dim": 2, "hidden": [8], "classes": 2 }
        })
    }

    fn write_config(value: &serde_json::Value) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let (_dir, path) = write_config(&minimal_json());
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, TrainConfig::default().epochs);
        assert_eq!(cfg.calibration.validation_bins, 10);
        assert_eq!(cfg.evaluation.ood_sample_size, 256);
    }

    #[test]
    fn unknown_key_is_rejected_with_position() {
        let mut value = minimal_json();
        value["mystery"] = serde_json::json!(1);
        let (_dir, path) = write_config(&value);
        let err = ExperimentConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exp.json:"), "{msg}");
        assert!(msg.contains("mystery"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_dataset_directory_names_the_key() {
        let mut value = minimal_json();
        value["data"]["train_ood"] =
            serde_json::json!({ "kind": "raw_tensor_dir", "path": "/no/such/dir", "seed": 0 });
        value["train"] = serde_json::json!({
            "objective": { "kind": "outlier_exposure", "lambda": 1.0 }
        });
        let (_dir, path) = write_config(&value);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data.train_ood.path"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_stream_objective_requires_train_ood() {
        let mut value = minimal_json();
        value["train"] = serde_json::json!({
            "objective": { "kind": "outlier_exposure", "lambda": 1.0 }
        });
        let (_dir, path) = write_config(&value);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("data.train_ood"), "{err}");
    }

    #[test]
    fn overrides_replace_seed_and_out_dir() {
        let (_dir, path) = write_config(&minimal_json());
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        cfg.apply_overrides(Some(99), Some(Path::new("elsewhere")));
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn request_dimension_mismatch_is_a_config_error() {
        let mut value = minimal_json();
        value["counterfactual"] = serde_json::json!({
            "requests": [ { "x": [0.5], "target": 0 } ]
        });
        let (_dir, path) = write_config(&value);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("requests[0].x"), "{err}");
    }

    #[test]
    fn threat_model_default_tracks_the_objective_radius() {
        let section = EvaluationSection::default();
        let at = ObjectiveKind::AdversarialTraining { eps_in: 0.25 };
        let tms = section.resolved_threat_models(&at).unwrap();
        assert_eq!(tms.len(), 1);
        assert_eq!(tms[0].epsilon, 0.25);
        let plain = ObjectiveKind::Plain;
        assert_eq!(section.resolved_threat_models(&plain).unwrap()[0].epsilon, 0.0);
    }

    #[test]
    fn wc_epsilon_prefers_explicit_then_out_radius() {
        let mut section = EvaluationSection::default();
        let ratio = ObjectiveKind::Ratio {
            eps_in: 0.14,
            eps_out: 0.04,
            lambda: 1.0,
            clean_in_fraction: 0.5,
        };
        assert_eq!(section.resolved_wc_epsilon(&ratio).unwrap(), 0.04);
        section.wc_epsilon = Some(0.5);
        assert_eq!(section.resolved_wc_epsilon(&ratio).unwrap(), 0.5);
        section.wc_epsilon = None;
        let at = ObjectiveKind::AdversarialTraining { eps_in: 0.14 };
        assert_eq!(section.resolved_wc_epsilon(&at).unwrap(), 0.14);
    }

    #[test]
    fn zero_step_size_resolves_per_radius() {
        let section = EvaluationSection::default();
        let attack = section.resolved_attack(0.16);
        assert_eq!(attack.step_size, 0.02);
        assert_eq!(attack.steps, 100);
        assert_eq!(attack.restarts, 5);
    }
}
