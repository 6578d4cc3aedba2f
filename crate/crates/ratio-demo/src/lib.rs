//! Browser bindings for a self-contained 2D lab: four Gaussian clusters on
//! the diagonals, an annulus of training outliers, and uniform noise held
//! out for evaluation. One `Lab` owns the data and the current model; the
//! page drives it through three operations (train, confidence landscape,
//! counterfactual sweep) plus small probes for hover readouts.
//!
//! Every method is an ordinary Rust function on native targets, so the
//! bindings are unit-tested with `cargo test` without a wasm toolchain.
//! Responses cross the boundary as JSON strings or raw RGBA buffers; errors
//! become thrown JS strings.

use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use ratio_core::attack::PgdConfig;
use ratio_core::counterfactual::{feature_generation_ood, generate, CounterfactualRequest};
use ratio_core::data::{generate as generate_dataset, Dataset, DatasetKind, DatasetSpec, SplitSpec};
use ratio_core::eval;
use ratio_core::model::{Architecture, Classifier};
use ratio_core::prob::softmax;
use ratio_core::seed::split_seed;
use ratio_core::threat::ThreatModel;
use ratio_core::train::{train, EarlyStopConfig, EpochRow, ObjectiveKind, TrainConfig};
use ratio_core::DenseVector;

/// In-radius shared by the adversarial objectives and the robust-accuracy
/// readout; out-radius for the low-confidence ball around outliers. Both in
/// unit-box units, matching the world the page draws.
const EPS_IN: f64 = 0.14;
const EPS_OUT: f64 = 0.04;
const LAMBDA: f64 = 1.0;
const CLEAN_IN_FRACTION: f64 = 0.5;

/// Cap keeping a single click's work bounded in the browser.
const MAX_EPOCHS: u32 = 120;

/// l2 budgets of the counterfactual sweep, sized to the unit square
/// (cluster centers sit 0.35 apart).
const BUDGETS: [f64; 6] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4];

/// Seed-stream tags, one per stage, so retraining with another objective
/// never perturbs the world and probes never perturb training.
mod stage {
    pub const DATA: u64 = 0x40;
    pub const TRAIN: u64 = 0x41;
    pub const EVAL: u64 = 0x42;
    pub const COUNTERFACTUAL: u64 = 0x43;
}

/// Class hues for the landscape and scatter; uncertainty fades to white.
const CLASS_COLORS: [[u8; 3]; 4] = [
    [37, 99, 235],   // blue
    [234, 88, 12],   // orange
    [22, 163, 74],   // green
    [147, 51, 234],  // purple
];

struct World {
    train: Dataset,
    holdout: Dataset,
    test: Dataset,
    rings: Dataset,
    noise: Dataset,
}

fn build_world(seed: u64) -> Result<World, String> {
    let m = 1.4;
    let sigma = 0.06;
    let data = generate_dataset(&DatasetSpec {
        kind: DatasetKind::GaussianMixture2d {
            classes: 4,
            means: vec![[m, m], [-m, m], [-m, -m], [m, -m]],
            sigma,
            n: 512,
        },
        seed: split_seed(seed, &[stage::DATA, 0]),
    })
    .map_err(err_string)?;
    let split = SplitSpec {
        train: 320.0 / 512.0,
        val: 96.0 / 512.0,
        test: 96.0 / 512.0,
        seed: split_seed(seed, &[stage::DATA, 1]),
    };
    let (train, holdout, test) = split.split(&data).map_err(err_string)?;
    let rings = generate_dataset(&DatasetSpec {
        kind: DatasetKind::Rings2d { n: 256 },
        seed: split_seed(seed, &[stage::DATA, 2]),
    })
    .map_err(err_string)?;
    let noise = generate_dataset(&DatasetSpec {
        kind: DatasetKind::UniformNoise {
            shape: vec![2],
            n: 128,
        },
        seed: split_seed(seed, &[stage::DATA, 3]),
    })
    .map_err(err_string)?;
    Ok(World {
        train,
        holdout,
        test,
        rings,
        noise,
    })
}

fn err_string(e: ratio_core::Error) -> String {
    e.to_string()
}

fn parse_objective(name: &str) -> Result<(ObjectiveKind, u64), String> {
    let kind = match name {
        "plain" => ObjectiveKind::Plain,
        "oe" => ObjectiveKind::OutlierExposure { lambda: LAMBDA },
        "at" => ObjectiveKind::AdversarialTraining { eps_in: EPS_IN },
        "acet" => ObjectiveKind::Acet {
            eps_out: EPS_OUT,
            lambda: LAMBDA,
        },
        "ratio" => ObjectiveKind::Ratio {
            eps_in: EPS_IN,
            eps_out: EPS_OUT,
            lambda: LAMBDA,
            clean_in_fraction: CLEAN_IN_FRACTION,
        },
        other => {
            return Err(format!(
                "unknown objective '{other}' (expected plain, oe, at, acet, or ratio)"
            ))
        }
    };
    let tag = match name {
        "plain" => 0,
        "oe" => 1,
        "at" => 2,
        "acet" => 3,
        _ => 4,
    };
    Ok((kind, tag))
}

/// The page's handle: a fixed world plus whatever model was trained last.
#[wasm_bindgen]
pub struct Lab {
    seed: u64,
    world: World,
    model: Option<Classifier>,
    history: Vec<EpochRow>,
}

#[wasm_bindgen]
impl Lab {
    /// Builds the world for one root seed. Deterministic: the same seed
    /// reproduces every dataset, training run, and sweep byte for byte.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Lab, String> {
        let seed = seed as u64;
        Ok(Lab {
            seed,
            world: build_world(seed)?,
            model: None,
            history: Vec::new(),
        })
    }

    /// Scatter data for the overlay: labeled training points and the
    /// annulus outliers, in unit-square coordinates.
    pub fn points(&self) -> String {
        let labels = self.world.train.labels.as_deref().unwrap_or(&[]);
        let in_dist: Vec<[f64; 3]> = self
            .world
            .train
            .points
            .iter()
            .zip(labels)
            .map(|(p, &y)| [p.as_slice()[0], p.as_slice()[1], y as f64])
            .collect();
        let train_ood: Vec<[f64; 2]> = self
            .world
            .rings
            .points
            .iter()
            .map(|p| [p.as_slice()[0], p.as_slice()[1]])
            .collect();
        json!({ "in_dist": in_dist, "train_ood": train_ood }).to_string()
    }

    /// Trains from scratch under one objective and reports the epoch
    /// history plus the summary row (clean and robust accuracy on the test
    /// split, AUC / worst-case AUC / mean max confidence against noise).
    pub fn train(&mut self, objective: &str, epochs: u32) -> Result<String, String> {
        let (kind, tag) = parse_objective(objective)?;
        let epochs = epochs.clamp(1, MAX_EPOCHS) as usize;
        let cfg = TrainConfig {
            objective: kind,
            epochs,
            in_batch: 64,
            out_batch: 64,
            attack_in: PgdConfig {
                steps: 5,
                step_size: EPS_IN / 4.0,
                ..PgdConfig::default()
            },
            attack_out: PgdConfig {
                steps: 10,
                step_size: EPS_OUT / 8.0,
                ..PgdConfig::default()
            },
            early_stop: EarlyStopConfig {
                attack: PgdConfig {
                    steps: 10,
                    step_size: EPS_IN / 8.0,
                    restarts: 2,
                    ..PgdConfig::default()
                },
                epsilon: None,
            },
            seed: split_seed(self.seed, &[stage::TRAIN, tag]),
            ..TrainConfig::default()
        };
        let arch = Architecture::Mlp {
            input_dim: 2,
            hidden: vec![32, 32],
            classes: 4,
        };
        let out_stream = Some(&self.world.rings);
        let state = train(&arch, &cfg, &self.world.train, out_stream, &self.world.holdout)
            .map_err(err_string)?;
        let model = state.best_model();

        let summary = self.summarize(&model)?;
        let best_epoch = state.best.as_ref().map(|b| b.epoch);
        self.model = Some(model);
        self.history = state.history;

        Ok(json!({
            "objective": objective,
            "epochs": self.history.len(),
            "best_epoch": best_epoch,
            "history": self.history,
            "clean_acc": summary.clean,
            "robust_acc": summary.robust,
            "auc": summary.auc,
            "wc_auc": summary.wc_auc,
            "mmc": summary.mmc,
        })
        .to_string())
    }

    /// Max-softmax landscape over the unit square as RGBA bytes, rows top
    /// to bottom with world-y increasing upward. Hue encodes the predicted
    /// class, saturation the confidence: 1/K renders white, 1 renders the
    /// full class color.
    pub fn heatmap(&self, width: u32, height: u32) -> Result<Vec<u8>, String> {
        let model = self.require_model()?;
        if width == 0 || height == 0 {
            return Err("heatmap needs a positive pixel count".into());
        }
        let (w, h) = (width as usize, height as usize);
        let mut rgba = vec![0u8; w * h * 4];
        for row in 0..h {
            let y = 1.0 - (row as f64 + 0.5) / h as f64;
            for col in 0..w {
                let x = (col as f64 + 0.5) / w as f64;
                let logits = model.forward(&[x, y]).map_err(err_string)?;
                let probs = softmax(&logits, 1.0).map_err(err_string)?;
                let (class, conf) = argmax(probs.as_slice());
                let hue = CLASS_COLORS[class % CLASS_COLORS.len()];
                let k = probs.as_slice().len() as f64;
                let t = ((conf - 1.0 / k) / (1.0 - 1.0 / k)).clamp(0.0, 1.0);
                let px = &mut rgba[(row * w + col) * 4..][..4];
                for (p, &c) in px[..3].iter_mut().zip(&hue) {
                    *p = (255.0 + (c as f64 - 255.0) * t).round() as u8;
                }
                px[3] = 255;
            }
        }
        Ok(rgba)
    }

    /// Class posterior at one point, for the hover readout.
    pub fn probe(&self, x: f64, y: f64) -> Result<String, String> {
        let model = self.require_model()?;
        let logits = model.forward(&[x, y]).map_err(err_string)?;
        let probs = softmax(&logits, 1.0).map_err(err_string)?;
        let (class, conf) = argmax(probs.as_slice());
        Ok(json!({
            "predicted": class,
            "confidence": conf,
            "probs": probs.as_slice(),
        })
        .to_string())
    }

    /// Budget sweep from a clicked point. `target` ≥ 0 asks for that class;
    /// a negative target sharpens whatever the model already predicts there
    /// (the out-distribution feature-generation mode). The response is the
    /// full sweep: origin, per-budget points, confidences, predictions.
    pub fn counterfactual(&self, x: f64, y: f64, target: i32) -> Result<String, String> {
        let model = self.require_model()?;
        let origin = DenseVector::new(vec![x, y]);
        let attack = PgdConfig {
            steps: 80,
            step_size: 0.02,
            ..PgdConfig::default()
        };
        let seed = split_seed(
            self.seed,
            &[stage::COUNTERFACTUAL, x.to_bits(), y.to_bits()],
        );
        let result = if target < 0 {
            feature_generation_ood(model, &origin, &BUDGETS, &attack, seed)
        } else {
            generate(
                model,
                &CounterfactualRequest {
                    x: origin,
                    target: target as usize,
                    budgets: BUDGETS.to_vec(),
                    attack,
                    seed,
                },
            )
        }
        .map_err(err_string)?;
        serde_json::to_string(&result).map_err(|e| e.to_string())
    }
}

struct Summary {
    clean: f64,
    robust: f64,
    auc: f64,
    wc_auc: f64,
    mmc: f64,
}

impl Lab {
    fn require_model(&self) -> Result<&Classifier, String> {
        self.model
            .as_ref()
            .ok_or_else(|| "no model yet: train first".to_string())
    }

    /// Summary metrics at temperature 1; attack budgets are trimmed so the
    /// whole row costs a fraction of the training click.
    fn summarize(&self, model: &Classifier) -> Result<Summary, String> {
        let tm_in = ThreatModel::l2(EPS_IN).map_err(err_string)?;
        let atk_in = PgdConfig {
            steps: 40,
            step_size: EPS_IN / 8.0,
            restarts: 2,
            ..PgdConfig::default()
        };
        let clean = eval::clean_accuracy(model, &self.world.test).map_err(err_string)?;
        let robust = eval::robust_accuracy(
            model,
            &self.world.test,
            &tm_in,
            &atk_in,
            split_seed(self.seed, &[stage::EVAL, 0]),
        )
        .map_err(err_string)?;

        let in_scores =
            eval::max_confidences(model, &self.world.test.points, 1.0).map_err(err_string)?;
        let out_scores =
            eval::max_confidences(model, &self.world.noise.points, 1.0).map_err(err_string)?;
        let auc = eval::auc(&eval::ScoreSet::new(in_scores.clone(), out_scores).map_err(err_string)?);

        let tm_out = ThreatModel::l2(EPS_OUT).map_err(err_string)?;
        let atk_out = PgdConfig {
            steps: 40,
            step_size: EPS_OUT / 8.0,
            ..PgdConfig::default()
        };
        let wc_scores = eval::worst_case_scores(
            model,
            &self.world.noise.points,
            &tm_out,
            &atk_out,
            1.0,
            false,
            split_seed(self.seed, &[stage::EVAL, 1]),
        )
        .map_err(err_string)?;
        let wc_auc = eval::auc(&eval::ScoreSet::new(in_scores, wc_scores).map_err(err_string)?);
        let mmc = eval::mmc(model, &self.world.noise.points, 1.0).map_err(err_string)?;
        Ok(Summary {
            clean,
            robust,
            auc,
            wc_auc,
            mmc,
        })
    }
}

fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}
