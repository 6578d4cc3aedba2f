//! Expected calibration error and temperature rescaling.
//!
//! ECE bins the max-softmax confidences of a labeled set into `M`
//! equal-width bins covering `[1/K, 1]` and sums the bin-weighted absolute
//! gaps between accuracy and mean confidence. Temperature fitting sweeps a
//! geometric grid and picks the ECE minimizer; rescaling by any positive
//! temperature preserves the argmax, so accuracy is unchanged.
//!
//! Bin convention: bins are closed on the left and open on the right, and
//! the last bin is closed on both ends, so confidence 1 lands in bin `M−1`.

use serde::{Deserialize, Serialize};

use crate::model::Classifier;
use crate::prob::{argmax, softmax, ProbabilityVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    /// Number of equal-width bins over `[1/K, 1]`.
    pub bins: usize,
    /// Number of classes `K`; fixes the lower edge `1/K`.
    pub classes: usize,
}

impl BinningConfig {
    pub fn new(bins: usize, classes: usize) -> Result<Self> {
        let cfg = BinningConfig { bins, classes };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::invalid("bin count must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("binning needs at least two classes"));
        }
        Ok(())
    }

    /// Lower edge of the confidence range, `1/K`.
    pub fn lo(&self) -> f64 {
        1.0 / self.classes as f64
    }

    fn width(&self) -> f64 {
        (1.0 - self.lo()) / self.bins as f64
    }

    /// Bin index of a confidence already checked to lie in `[1/K, 1]`.
    fn index(&self, confidence: f64) -> usize {
        let raw = ((confidence - self.lo()) / self.width()) as usize;
        raw.min(self.bins - 1)
    }

    /// `[lo, hi]` edges of bin `m`.
    pub fn edges(&self, m: usize) -> (f64, f64) {
        let lo = self.lo() + m as f64 * self.width();
        let hi = if m + 1 == self.bins {
            1.0
        } else {
            self.lo() + (m + 1) as f64 * self.width()
        };
        (lo, hi)
    }
}

/// Occupancy and means of one confidence bin. Empty bins report zero
/// accuracy and confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub acc: f64,
    pub conf: f64,
}

fn check_samples(confidences: &[f64], correct: &[bool], binning: &BinningConfig) -> Result<()> {
    binning.validate()?;
    if confidences.is_empty() {
        return Err(Error::invalid("calibration needs at least one sample"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape("confidence and correctness arrays differ in length"));
    }
    let lo = binning.lo();
    for (i, &c) in confidences.iter().enumerate() {
        if !(c >= lo && c <= 1.0) {
            return Err(Error::invalid(format!(
                "confidence {c} at index {i} outside [{lo}, 1]"
            )));
        }
    }
    Ok(())
}

/// Per-bin occupancy, accuracy, and mean confidence.
pub fn bin_stats(
    confidences: &[f64],
    correct: &[bool],
    binning: &BinningConfig,
) -> Result<Vec<BinStat>> {
    check_samples(confidences, correct, binning)?;
    let mut counts = vec![0usize; binning.bins];
    let mut hits = vec![0usize; binning.bins];
    let mut conf_sums = vec![0.0f64; binning.bins];
    for (&c, &k) in confidences.iter().zip(correct) {
        let m = binning.index(c);
        counts[m] += 1;
        hits[m] += k as usize;
        conf_sums[m] += c;
    }
    Ok((0..binning.bins)
        .map(|m| {
            let (lo, hi) = binning.edges(m);
            let count = counts[m];
            let (acc, conf) = if count > 0 {
                (hits[m] as f64 / count as f64, conf_sums[m] / count as f64)
            } else {
                (0.0, 0.0)
            };
            BinStat {
                lo,
                hi,
                count,
                acc,
                conf,
            }
        })
        .collect())
}

/// Expected calibration error: `Σ_m (|B_m|/n)·|acc(B_m) − conf(B_m)|`.
/// Empty bins contribute nothing.
pub fn ece(confidences: &[f64], correct: &[bool], binning: &BinningConfig) -> Result<f64> {
    let stats = bin_stats(confidences, correct, binning)?;
    let n = confidences.len() as f64;
    Ok(stats
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.count as f64 / n) * (b.acc - b.conf).abs())
        .sum())
}

/// Geometric temperature grid with exact endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureGrid {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        TemperatureGrid {
            count: 500,
            lo: 0.05,
            hi: 2.71,
        }
    }
}

impl TemperatureGrid {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::invalid("temperature grid needs at least two points"));
        }
        if !(self.lo > 0.0 && self.hi > self.lo) {
            return Err(Error::invalid("temperature grid needs 0 < lo < hi"));
        }
        Ok(())
    }

    /// Grid values `lo·(hi/lo)^(i/(count−1))`; the first and last entries
    /// are exactly `lo` and `hi`.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.count;
        let log_ratio = (self.hi / self.lo).ln();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(self.lo * (log_ratio * i as f64 / (n - 1) as f64).exp());
        }
        out[0] = self.lo;
        out[n - 1] = self.hi;
        Ok(out)
    }
}

/// `softmax(f/T)` per row.
pub fn apply_temperature(logit_rows: &[Vec<f64>], temperature: f64) -> Result<Vec<ProbabilityVector>> {
    logit_rows
        .iter()
        .map(|row| softmax(row, temperature))
        .collect()
}

/// Outcome of the temperature sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// ECE of the raw confidences (T = 1).
    pub ece_before: f64,
    /// ECE at the fitted temperature.
    pub ece_after: f64,
}

/// Sweeps the grid and returns the ECE-minimizing temperature. Exact ECE
/// ties break toward the temperature nearest 1; a residual distance tie
/// keeps the smaller temperature. Correctness uses the T=1 argmax, which
/// every positive temperature preserves.
pub fn fit_temperature(
    logit_rows: &[Vec<f64>],
    labels: &[usize],
    binning: &BinningConfig,
    grid: &TemperatureGrid,
) -> Result<TemperatureFit> {
    binning.validate()?;
    if logit_rows.is_empty() {
        return Err(Error::invalid("temperature fitting needs a non-empty set"));
    }
    if logit_rows.len() != labels.len() {
        return Err(Error::shape("logit rows and labels differ in length"));
    }
    let correct: Vec<bool> = logit_rows
        .iter()
        .zip(labels)
        .map(|(row, &y)| argmax(row) == y)
        .collect();

    let ece_at = |t: f64| -> Result<f64> {
        let confidences: Vec<f64> = apply_temperature(logit_rows, t)?
            .iter()
            .map(|p| p.max_confidence())
            .collect();
        ece(&confidences, &correct, binning)
    };

    let ece_before = ece_at(1.0)?;
    let mut best_t = f64::NAN;
    let mut best_ece = f64::INFINITY;
    for t in grid.values()? {
        let e = ece_at(t)?;
        let better = e < best_ece
            || (e == best_ece && (t - 1.0).abs() < (best_t - 1.0).abs());
        if better {
            best_t = t;
            best_ece = e;
        }
    }
    Ok(TemperatureFit {
        temperature: best_t,
        ece_before,
        ece_after: best_ece,
    })
}

/// JSON-facing calibration summary: the fitted temperature, before/after
/// ECE, and the validation-set bin table at the fitted temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub temperature: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub bins: Vec<BinStat>,
}

/// Fits a temperature on a labeled validation set run through `model`.
pub fn calibrate(
    model: &Classifier,
    points: &[crate::vector::DenseVector],
    labels: &[usize],
    binning: &BinningConfig,
    grid: &TemperatureGrid,
) -> Result<CalibrationReport> {
    if points.len() != labels.len() {
        return Err(Error::shape("points and labels differ in length"));
    }
    let logit_rows: Vec<Vec<f64>> = points
        .iter()
        .map(|x| model.forward(x.as_slice()))
        .collect::<Result<_>>()?;
    let fit = fit_temperature(&logit_rows, labels, binning, grid)?;
    let confidences: Vec<f64> = apply_temperature(&logit_rows, fit.temperature)?
        .iter()
        .map(|p| p.max_confidence())
        .collect();
    let correct: Vec<bool> = logit_rows
        .iter()
        .zip(labels)
        .map(|(row, &y)| argmax(row) == y)
        .collect();
    let bins = bin_stats(&confidences, &correct, binning)?;
    Ok(CalibrationReport {
        temperature: fit.temperature,
        ece_before: fit.ece_before,
        ece_after: fit.ece_after,
        bins,
    })
}
