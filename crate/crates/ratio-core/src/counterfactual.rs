//! Counterfactual generation: maximize a target class's confidence inside
//! nested l2 balls around a point, sweeping an increasing budget grid with
//! warm starts, then render the results as grids or trajectory tables.
//!
//! The per-budget subproblem is NP-hard in general; the sweep reports the
//! confidence the attack achieves, never claiming the true argmax.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{maximize_confidence_at, ConfidenceTarget, PgdConfig};
use crate::model::Classifier;
use crate::prob::softmax;
use crate::seed::split_seed;
use crate::threat::{ThreatModel, MEMBERSHIP_TOL};
use crate::vector::DenseVector;
use crate::{Error, Result};

/// Default budget grid for the small-image regime.
pub const DEFAULT_BUDGETS: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Default steps of the budget attack. Momentum-PGD stands in for the
/// adaptive-step attack of the same budget; reports record the substitution.
pub const DEFAULT_STEPS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRequest {
    pub x: DenseVector,
    /// Class whose confidence the sweep maximizes. Targeting the source
    /// class itself is allowed (in-class confidence sharpening).
    pub target: usize,
    /// Strictly increasing l2 budgets.
    pub budgets: Vec<f64>,
    pub attack: PgdConfig,
    pub seed: u64,
}

impl CounterfactualRequest {
    pub fn new(x: DenseVector, target: usize) -> Self {
        CounterfactualRequest {
            x,
            target,
            budgets: DEFAULT_BUDGETS.to_vec(),
            attack: PgdConfig::default().with_steps(DEFAULT_STEPS),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.budgets.is_empty() {
            return Err(Error::invalid("budget grid is empty"));
        }
        if self.budgets[0] < 0.0 || !self.budgets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "budgets must be non-negative and strictly increasing",
            ));
        }
        if !self.x.in_unit_box(MEMBERSHIP_TOL) {
            return Err(Error::invalid("counterfactual origin must lie in [0,1]^d"));
        }
        Ok(())
    }
}

/// One budget's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetStep {
    pub budget: f64,
    pub z: DenseVector,
    /// `p̂_target(z)`; non-decreasing across the sweep.
    pub confidence: f64,
    pub predicted: usize,
}

/// A full budget sweep for one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    /// Class predicted at the original point.
    pub source: usize,
    pub target: usize,
    pub original: DenseVector,
    /// `p̂_target(x)` at the original point (the budget-0 confidence).
    pub original_confidence: f64,
    pub steps: Vec<BudgetStep>,
}

/// Sweeps the budget grid, warm-starting each attack from the previous
/// budget's best point. The warm start keeps the confidence column
/// non-decreasing: every attack's trajectory includes its start.
pub fn generate(model: &Classifier, req: &CounterfactualRequest) -> Result<CounterfactualResult> {
    req.validate()?;
    if req.target >= model.classes() {
        return Err(Error::invalid(format!(
            "target class {} out of range for {} classes",
            req.target,
            model.classes()
        )));
    }
    let source = model.predicted_class(&req.x)?;
    let confidence_at = |z: &DenseVector| -> Result<f64> {
        let logits = model.forward(z.as_slice())?;
        Ok(softmax(&logits, 1.0)?.as_slice()[req.target])
    };
    let original_confidence = confidence_at(&req.x)?;

    let mut warm = req.x.clone();
    let mut steps = Vec::with_capacity(req.budgets.len());
    for (k, &budget) in req.budgets.iter().enumerate() {
        let (z, confidence) = if budget == 0.0 {
            (req.x.clone(), original_confidence)
        } else {
            let tm = ThreatModel::l2(budget)?;
            let result = maximize_confidence_at(
                model,
                &req.x,
                Some(&warm),
                &tm,
                ConfidenceTarget::Class { class: req.target },
                &req.attack,
                1.0,
                split_seed(req.seed, &[k as u64]),
            )?;
            (result.z_best, result.loss_best)
        };
        let predicted = model.predicted_class(&z)?;
        warm = z.clone();
        steps.push(BudgetStep {
            budget,
            z,
            confidence,
            predicted,
        });
    }
    Ok(CounterfactualResult {
        source,
        target: req.target,
        original: req.x.clone(),
        original_confidence,
        steps,
    })
}

/// Feature generation from an out-distribution point: sharpen whatever the
/// model already predicts there.
pub fn feature_generation_ood(
    model: &Classifier,
    x: &DenseVector,
    budgets: &[f64],
    attack: &PgdConfig,
    seed: u64,
) -> Result<CounterfactualResult> {
    let target = model.predicted_class(x)?;
    let req = CounterfactualRequest {
        x: x.clone(),
        target,
        budgets: budgets.to_vec(),
        attack: attack.clone(),
        seed,
    };
    generate(model, &req)
}

/// Pixel layout of image-shaped vectors: channel-major planes, i.e. value
/// `(c·H + y)·W + x`. Grayscale uses one channel, color three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        let shape = ImageShape {
            height,
            width,
            channels,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("image sides must be positive"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("image must have 1 or 3 channels"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    fn value(&self, data: &[f64], y: usize, x: usize, c: usize) -> f64 {
        let plane = if self.channels == 1 { 0 } else { c };
        data[(plane * self.height + y) * self.width + x]
    }
}

/// `floor(clamp(v)·255 + 0.5)`: round-half-up quantization to a byte.
fn quantize(v: f64) -> u8 {
    let clamped = v.clamp(0.0, 1.0);
    (clamped * 255.0 + 0.5).floor() as u8
}

/// Renders sweep results as one binary pixmap: one row of tiles per result,
/// the original followed by each budget's point, tiles abutted directly
/// (no separator columns). Grayscale replicates into RGB.
pub fn render_grid(results: &[CounterfactualResult], shape: &ImageShape) -> Result<Vec<u8>> {
    shape.validate()?;
    if results.is_empty() {
        return Err(Error::invalid("no results to render"));
    }
    let tiles_per_row = 1 + results[0].steps.len();
    for r in results {
        if r.original.dim() != shape.dim() {
            return Err(Error::invalid(format!(
                "point dimension {} is not image-shaped for {}x{}x{}",
                r.original.dim(),
                shape.height,
                shape.width,
                shape.channels
            )));
        }
        if 1 + r.steps.len() != tiles_per_row {
            return Err(Error::invalid("results disagree on budget count"));
        }
    }

    let grid_w = tiles_per_row * shape.width;
    let grid_h = results.len() * shape.height;
    let mut bytes = format!("P6\n{grid_w} {grid_h}\n255\n").into_bytes();
    for result in results {
        let tiles: Vec<&DenseVector> = std::iter::once(&result.original)
            .chain(result.steps.iter().map(|s| &s.z))
            .collect();
        for y in 0..shape.height {
            for tile in &tiles {
                for x in 0..shape.width {
                    for c in 0..3 {
                        bytes.push(quantize(shape.value(tile.as_slice(), y, x, c)));
                    }
                }
            }
        }
    }
    Ok(bytes)
}

fn format_float(v: f64) -> String {
    // Shortest round-trip formatting keeps CSV output byte-deterministic.
    format!("{v}")
}

/// Per-tile annotation table: the original appears as budget 0.
pub fn annotation_csv(results: &[CounterfactualResult]) -> String {
    let mut out = String::from("row,budget,target_class,confidence,predicted_class\n");
    for (row, result) in results.iter().enumerate() {
        out.push_str(&format!(
            "{row},0,{},{},{}\n",
            result.target,
            format_float(result.original_confidence),
            result.source
        ));
        for step in &result.steps {
            out.push_str(&format!(
                "{row},{},{},{},{}\n",
                format_float(step.budget),
                result.target,
                format_float(step.confidence),
                step.predicted
            ));
        }
    }
    out
}

/// Writes the pixmap grid plus a sidecar annotation CSV next to it (same
/// stem, `.csv` extension). Returns the sidecar path.
pub fn emit_grid(
    results: &[CounterfactualResult],
    shape: &ImageShape,
    path: &Path,
) -> Result<std::path::PathBuf> {
    let bytes = render_grid(results, shape)?;
    fs::write(path, bytes)?;
    let sidecar = path.with_extension("csv");
    fs::write(&sidecar, annotation_csv(results))?;
    Ok(sidecar)
}

/// Trajectory table for non-image data: one row per tile with the full
/// coordinates, so 2D sweeps plot as scatter paths.
pub fn trajectory_csv(results: &[CounterfactualResult]) -> Result<String> {
    let dim = match results.first() {
        Some(r) => r.original.dim(),
        None => return Err(Error::invalid("no results to render")),
    };
    let mut out = String::from("row,budget,target_class,confidence,predicted_class");
    for d in 0..dim {
        out.push_str(&format!(",x{d}"));
    }
    out.push('\n');
    let mut push_row = |row: usize,
                        budget: f64,
                        target: usize,
                        confidence: f64,
                        predicted: usize,
                        z: &DenseVector| {
        out.push_str(&format!(
            "{row},{},{target},{},{predicted}",
            format_float(budget),
            format_float(confidence)
        ));
        for &v in z.as_slice() {
            out.push_str(&format!(",{}", format_float(v)));
        }
        out.push('\n');
    };
    for (row, result) in results.iter().enumerate() {
        if result.original.dim() != dim {
            return Err(Error::shape("results disagree on dimension"));
        }
        push_row(
            row,
            0.0,
            result.target,
            result.original_confidence,
            result.source,
            &result.original,
        );
        for step in &result.steps {
            push_row(
                row,
                step.budget,
                result.target,
                step.confidence,
                step.predicted,
                &step.z,
            );
        }
    }
    Ok(out)
}

/// Parses a binary pixmap produced by [`render_grid`]; tolerant of any
/// whitespace between header tokens. Returns (width, height, RGB bytes).
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(*pos as u64, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }
    let mut pos = 0usize;
    if token(bytes, &mut pos)? != "P6" {
        return Err(Error::format(0, "not a P6 pixmap"));
    }
    let w: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format(pos as u64, "bad width"))?;
    let h: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format(pos as u64, "bad height"))?;
    let maxval = token(bytes, &mut pos)?;
    if maxval != "255" {
        return Err(Error::format(pos as u64, "maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = w * h * 3;
    let payload = bytes
        .get(pos..)
        .ok_or_else(|| Error::format(pos as u64, "truncated pixmap"))?;
    if payload.len() != expected {
        return Err(Error::format(
            pos as u64,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    Ok((w, h, payload.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn random_model(seed: u64) -> Classifier {
        Classifier::init(
            Architecture::Mlp {
                input_dim: 2,
                hidden: vec![12],
                classes: 3,
            },
            seed,
        )
        .unwrap()
    }

    fn zero_model(input_dim: usize, classes: usize) -> Classifier {
        let arch = Architecture::Mlp {
            input_dim,
            hidden: vec![],
            classes,
        };
        Classifier::new(arch.clone(), vec![0.0; arch.param_count()]).unwrap()
    }

    /// Binary linear model [w·z + b, −w·z − b].
    fn binary_linear(w: &[f64], b: f64) -> Classifier {
        let mut params: Vec<f64> = w.to_vec();
        params.extend(w.iter().map(|v| -v));
        params.push(b);
        params.push(-b);
        Classifier::new(
            Architecture::Mlp {
                input_dim: w.len(),
                hidden: vec![],
                classes: 2,
            },
            params,
        )
        .unwrap()
    }

    #[test]
    fn zero_budget_returns_the_original() {
        let model = random_model(3);
        let x = DenseVector::new(vec![0.3, 0.7]);
        let mut req = CounterfactualRequest::new(x.clone(), 1);
        req.budgets = vec![0.0];
        let result = generate(&model, &req).unwrap();
        assert_eq!(result.steps.len(), 1);
        assert_eq!(result.steps[0].z, x);
        let logits = model.forward(x.as_slice()).unwrap();
        let p = softmax(&logits, 1.0).unwrap().as_slice()[1];
        assert_eq!(result.steps[0].confidence.to_bits(), p.to_bits());
        assert_eq!(result.original_confidence.to_bits(), p.to_bits());
    }

    #[test]
    fn constant_model_confidence_stays_at_chance() {
        let model = zero_model(2, 4);
        let mut req = CounterfactualRequest::new(DenseVector::new(vec![0.5, 0.5]), 2);
        req.budgets = vec![0.1, 0.3, 0.6];
        req.attack = req.attack.with_steps(5);
        let result = generate(&model, &req).unwrap();
        for step in &result.steps {
            assert_eq!(step.confidence, 0.25);
        }
    }

    #[test]
    fn sweep_is_feasible_and_monotone() {
        let model = random_model(5);
        let x = DenseVector::new(vec![0.4, 0.6]);
        let mut req = CounterfactualRequest::new(x.clone(), 2);
        req.budgets = vec![0.1, 0.25, 0.5, 1.0];
        req.attack = req.attack.with_steps(30);
        let result = generate(&model, &req).unwrap();
        let mut prev = 0.0;
        for step in &result.steps {
            assert!(step.z.l2_distance(&x) <= step.budget + MEMBERSHIP_TOL);
            assert!(step.z.in_unit_box(MEMBERSHIP_TOL));
            assert!(
                step.confidence >= prev,
                "confidence must not decrease: {:?}",
                result.steps
            );
            prev = step.confidence;
        }
    }

    #[test]
    fn sweep_crosses_a_linear_decision_boundary() {
        // Boundary at x₀ = 0.5; starting at x₀ = 0.2 the 0.4-budget attack
        // reaches the other side.
        let model = binary_linear(&[3.0, 0.0], -1.5);
        let x = DenseVector::new(vec![0.2, 0.5]);
        assert_eq!(model.predicted_class(&x).unwrap(), 1);
        let mut req = CounterfactualRequest::new(x, 0);
        req.budgets = vec![0.1, 0.4];
        req.attack = req.attack.with_steps(40);
        let result = generate(&model, &req).unwrap();
        assert_eq!(result.source, 1);
        assert_eq!(result.steps[0].predicted, 1);
        assert_eq!(result.steps.last().unwrap().predicted, 0);
    }

    #[test]
    fn feature_generation_targets_the_prediction() {
        let model = random_model(7);
        let x = DenseVector::new(vec![0.9, 0.1]);
        let predicted = model.predicted_class(&x).unwrap();
        let result = feature_generation_ood(
            &model,
            &x,
            &[0.2, 0.4],
            &PgdConfig::default().with_steps(10),
            11,
        )
        .unwrap();
        assert_eq!(result.target, predicted);
        assert_eq!(result.source, predicted);
        let logits = model.forward(x.as_slice()).unwrap();
        let clean = softmax(&logits, 1.0).unwrap().max_confidence();
        assert_eq!(result.original_confidence.to_bits(), clean.to_bits());
        assert!(result.steps[0].confidence >= clean);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let model = random_model(9);
        let x = DenseVector::new(vec![0.5, 0.5]);
        let mut req = CounterfactualRequest::new(x.clone(), 1);
        req.budgets = vec![0.5, 0.5];
        assert!(generate(&model, &req).is_err());
        let mut req = CounterfactualRequest::new(x.clone(), 9);
        req.budgets = vec![0.5];
        assert!(generate(&model, &req).is_err());
        let mut req = CounterfactualRequest::new(DenseVector::new(vec![1.5, 0.0]), 1);
        req.budgets = vec![0.5];
        assert!(generate(&model, &req).is_err());
    }

    fn fake_result(values: &[(f64, Vec<f64>)], original: Vec<f64>) -> CounterfactualResult {
        CounterfactualResult {
            source: 0,
            target: 1,
            original: DenseVector::new(original),
            original_confidence: 0.5,
            steps: values
                .iter()
                .map(|(budget, z)| BudgetStep {
                    budget: *budget,
                    z: DenseVector::new(z.clone()),
                    confidence: 0.75,
                    predicted: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn golden_grid_two_black_tiles() {
        // One 2×2 all-zero grayscale image and one budget: two abutted
        // tiles, header advertising a 4×2 pixmap.
        let result = fake_result(&[(0.5, vec![0.0; 4])], vec![0.0; 4]);
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let bytes = render_grid(&[result], &shape).unwrap();
        let mut expected = b"P6\n4 2\n255\n".to_vec();
        expected.extend(std::iter::repeat(0u8).take(4 * 2 * 3));
        assert_eq!(bytes, expected);
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        let result = fake_result(&[(0.5, vec![0.5])], vec![-0.2]);
        let shape = ImageShape::new(1, 1, 1).unwrap();
        let bytes = render_grid(&[result], &shape).unwrap();
        let (w, h, pixels) = parse_ppm(&bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        // Original clamps to 0, the 0.5 tile quantizes to 128.
        assert_eq!(&pixels[..3], &[0, 0, 0]);
        assert_eq!(&pixels[3..], &[128, 128, 128]);

        let hot = fake_result(&[(0.5, vec![1.3])], vec![1.0]);
        let bytes = render_grid(&[hot], &shape).unwrap();
        let (_, _, pixels) = parse_ppm(&bytes).unwrap();
        assert_eq!(pixels, vec![255u8; 6]);
    }

    #[test]
    fn grid_emission_is_deterministic_and_round_trips() {
        let result = fake_result(
            &[(0.5, vec![0.1, 0.9, 0.4, 0.6]), (1.0, vec![0.3, 0.2, 0.8, 0.7])],
            vec![0.25, 0.5, 0.75, 1.0],
        );
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let a = render_grid(std::slice::from_ref(&result), &shape).unwrap();
        let b = render_grid(std::slice::from_ref(&result), &shape).unwrap();
        assert_eq!(a, b);
        let (w, h, pixels) = parse_ppm(&a).unwrap();
        assert_eq!((w, h), (6, 2));
        assert_eq!(pixels.len(), 6 * 2 * 3);
        // First pixel of the original tile: 0.25 → 64, replicated to RGB.
        assert_eq!(&pixels[..3], &[64, 64, 64]);
    }

    #[test]
    fn non_image_shapes_are_rejected() {
        let result = fake_result(&[(0.5, vec![0.0; 3])], vec![0.0; 3]);
        let shape = ImageShape::new(2, 2, 1).unwrap();
        assert!(render_grid(&[result], &shape).is_err());
        assert!(ImageShape::new(2, 2, 2).is_err());
        assert!(ImageShape::new(0, 2, 1).is_err());
    }

    #[test]
    fn annotation_and_trajectory_tables_are_stable() {
        let result = fake_result(&[(0.5, vec![0.1, 0.9])], vec![0.25, 0.5]);
        let csv = annotation_csv(&[result.clone()]);
        assert_eq!(
            csv,
            "row,budget,target_class,confidence,predicted_class\n\
             0,0,1,0.5,0\n\
             0,0.5,1,0.75,1\n"
        );
        let traj = trajectory_csv(&[result]).unwrap();
        assert_eq!(
            traj,
            "row,budget,target_class,confidence,predicted_class,x0,x1\n\
             0,0,1,0.5,0,0.25,0.5\n\
             0,0.5,1,0.75,1,0.1,0.9\n"
        );
    }

    #[test]
    fn emit_grid_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.ppm");
        let result = fake_result(&[(0.5, vec![0.0; 4])], vec![0.0; 4]);
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let sidecar = emit_grid(&[result], &shape, &path).unwrap();
        assert!(path.exists());
        assert_eq!(sidecar, dir.path().join("grid.csv"));
        let bytes = fs::read(&path).unwrap();
        parse_ppm(&bytes).unwrap();
        let csv = fs::read_to_string(&sidecar).unwrap();
        assert!(csv.starts_with("row,budget,target_class"));
    }
}
