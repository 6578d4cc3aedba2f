//! Dataset generation and the raw tensor interchange format.
//!
//! Desk-scale stand-ins for the image benchmarks: a labeled 2-D Gaussian
//! mixture as the in-distribution, an annulus of unlabeled ring points as
//! the training out-distribution, and uniform/smoothed noise plus held-out
//! clusters for evaluation-time out-distribution sets. Training and
//! evaluation out-distributions are deliberately different sets.
//!
//! 2-D generators work in a world frame `[−4,4]²` that is affinely mapped
//! onto the input box `[0,1]²`; the ring annulus (world radii 3.0–3.6) lies
//! strictly inside the world frame, so every generated point is feasible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::seed::{rng_from, split_seed, stream};
use crate::vector::DenseVector;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;

/// Half-extent of the 2-D world frame; world coordinates map to inputs via
/// `(w + 4) / 8`.
pub const WORLD_HALF_EXTENT: f64 = 4.0;

/// Inner and outer world radii of the ring annulus. The inner radius is the
/// hard floor asserted per sample; mixtures used alongside rings should keep
/// their 3σ cores inside it.
pub const RING_INNER_RADIUS: f64 = 3.0;
pub const RING_OUTER_RADIUS: f64 = 3.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// `n` labeled points; each draws a class uniformly, then a Gaussian
    /// offset (isotropic, standard deviation `sigma` in world units) around
    /// that class mean, redrawing offsets that leave the world frame.
    GaussianMixture2d {
        classes: usize,
        means: Vec<[f64; 2]>,
        sigma: f64,
        n: usize,
    },
    /// `n` unlabeled points uniform in angle and radius over the annulus.
    Rings2d { n: usize },
    /// Load from a directory in the raw tensor format.
    RawTensorDir { path: PathBuf },
    /// `n` unlabeled points with i.i.d. uniform `[0,1]` coordinates.
    UniformNoise { shape: Vec<usize>, n: usize },
    /// Uniform noise convolved with a normalized box kernel (circular
    /// boundary), then min-max rescaled per sample. Width 1 is the identity
    /// kernel and reproduces `UniformNoise` bit-for-bit under the same seed.
    SmoothedNoise {
        shape: Vec<usize>,
        n: usize,
        kernel_width: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub seed: u64,
}

/// A point set, optionally labeled. All coordinates lie in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Vec<DenseVector>,
    pub labels: Option<Vec<usize>>,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// New dataset holding the given rows, preserving labels.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            dim: self.dim,
        }
    }

    /// Deterministic random subsample without replacement; returns the whole
    /// set when `n` exceeds its size.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut rng_from(split_seed(seed, &[stream::SPLIT])));
        indices.truncate(n);
        self.select(&indices)
    }
}

fn world_to_input(w: f64) -> f64 {
    (w + WORLD_HALF_EXTENT) / (2.0 * WORLD_HALF_EXTENT)
}

fn gaussian_pair(rng: &mut rand_chacha::ChaCha8Rng) -> (f64, f64) {
    // Box-Muller; u1 is kept away from 0 so the logarithm stays finite.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

fn shape_dim(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&s| s == 0) {
        return Err(Error::invalid("noise shape must have positive extents"));
    }
    Ok(shape.iter().product())
}

/// Separable circular box blur over the trailing spatial axes of `shape`.
/// 1-D shapes blur along the single axis; `[H,W]` blurs both; `[C,H,W]`
/// blurs each channel independently.
fn box_blur(values: &[f64], shape: &[usize], width: usize) -> Vec<f64> {
    let half = width / 2;
    let blur_axis = |data: &[f64], stride: usize, len: usize, base: usize| -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut sum = 0.0;
            for k in 0..width {
                let j = (i + len + k - half) % len;
                sum += data[base + j * stride];
            }
            *slot = sum / width as f64;
        }
        out
    };

    let (channels, spatial): (usize, &[usize]) = match shape.len() {
        1 | 2 => (1, shape),
        _ => (shape[0], &shape[1..]),
    };
    let plane: usize = spatial.iter().product();
    let mut current = values.to_vec();
    match spatial.len() {
        1 => {
            for c in 0..channels {
                let blurred = blur_axis(&current, 1, plane, c * plane);
                current[c * plane..(c + 1) * plane].copy_from_slice(&blurred);
            }
        }
        2 => {
            let (h, w) = (spatial[0], spatial[1]);
            for c in 0..channels {
                let base = c * plane;
                // Rows, then columns; the composition is the 2-D box kernel.
                for y in 0..h {
                    let blurred = blur_axis(&current, 1, w, base + y * w);
                    current[base + y * w..base + (y + 1) * w].copy_from_slice(&blurred);
                }
                for x in 0..w {
                    let blurred = blur_axis(&current, w, h, base + x);
                    for (y, v) in blurred.into_iter().enumerate() {
                        current[base + y * w + x] = v;
                    }
                }
            }
        }
        _ => unreachable!("spatial rank limited to 2"),
    }
    current
}

fn min_max_rescale(values: &mut [f64]) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        for v in values.iter_mut() {
            *v = 0.5;
        }
    } else {
        for v in values.iter_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    }
}

/// Generates (or loads) the dataset described by `spec`. Deterministic:
/// identical spec and seed produce bit-identical datasets.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let mut rng = rng_from(split_seed(spec.seed, &[stream::DATA]));
    match &spec.kind {
        DatasetKind::GaussianMixture2d {
            classes,
            means,
            sigma,
            n,
        } => {
            if *n == 0 {
                return Err(Error::invalid("mixture size must be positive"));
            }
            if *classes < 2 {
                return Err(Error::invalid("mixture needs at least 2 classes"));
            }
            if means.len() != *classes {
                return Err(Error::invalid(format!(
                    "mixture has {} means for {classes} classes",
                    means.len()
                )));
            }
            if !(*sigma > 0.0) {
                return Err(Error::invalid("mixture sigma must be positive"));
            }
            if means
                .iter()
                .any(|m| m.iter().any(|&c| c.abs() > WORLD_HALF_EXTENT))
            {
                return Err(Error::invalid("mixture means must lie in the world frame"));
            }
            let mut points = Vec::with_capacity(*n);
            let mut labels = Vec::with_capacity(*n);
            for _ in 0..*n {
                let class = rng.gen_range(0..*classes);
                let mean = means[class];
                let (wx, wy) = loop {
                    let (gx, gy) = gaussian_pair(&mut rng);
                    let (wx, wy) = (mean[0] + sigma * gx, mean[1] + sigma * gy);
                    if wx.abs() <= WORLD_HALF_EXTENT && wy.abs() <= WORLD_HALF_EXTENT {
                        break (wx, wy);
                    }
                };
                points.push(DenseVector::new(vec![
                    world_to_input(wx),
                    world_to_input(wy),
                ]));
                labels.push(class);
            }
            Ok(Dataset {
                points,
                labels: Some(labels),
                dim: 2,
            })
        }
        DatasetKind::Rings2d { n } => {
            if *n == 0 {
                return Err(Error::invalid("ring size must be positive"));
            }
            let mut points = Vec::with_capacity(*n);
            for _ in 0..*n {
                let radius = rng.gen_range(RING_INNER_RADIUS..=RING_OUTER_RADIUS);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                // Constructed constraint, asserted per sample: ring points
                // never enter the disk that holds the mixture cores.
                assert!((RING_INNER_RADIUS..=RING_OUTER_RADIUS).contains(&radius));
                points.push(DenseVector::new(vec![
                    world_to_input(radius * angle.cos()),
                    world_to_input(radius * angle.sin()),
                ]));
            }
            Ok(Dataset {
                points,
                labels: None,
                dim: 2,
            })
        }
        DatasetKind::RawTensorDir { path } => load_raw(path),
        DatasetKind::UniformNoise { shape, n } => {
            if *n == 0 {
                return Err(Error::invalid("noise size must be positive"));
            }
            let d = shape_dim(shape)?;
            let points = (0..*n)
                .map(|_| DenseVector::new((0..d).map(|_| rng.gen_range(0.0..1.0)).collect()))
                .collect();
            Ok(Dataset {
                points,
                labels: None,
                dim: d,
            })
        }
        DatasetKind::SmoothedNoise {
            shape,
            n,
            kernel_width,
        } => {
            if *n == 0 {
                return Err(Error::invalid("noise size must be positive"));
            }
            let d = shape_dim(shape)?;
            if *kernel_width == 0 || kernel_width % 2 == 0 {
                return Err(Error::invalid("kernel width must be odd and positive"));
            }
            if shape.len() > 3 {
                return Err(Error::invalid("smoothed noise supports at most 3 axes"));
            }
            let mut points = Vec::with_capacity(*n);
            for _ in 0..*n {
                let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
                // Width 1 is the identity kernel: skip blur and rescale so
                // the sample is bit-equal to the uniform draw.
                let sample = if *kernel_width == 1 {
                    raw
                } else {
                    let mut blurred = box_blur(&raw, shape, *kernel_width);
                    min_max_rescale(&mut blurred);
                    blurred
                };
                points.push(DenseVector::new(sample));
            }
            Ok(Dataset {
                points,
                labels: None,
                dim: d,
            })
        }
    }
}

/// Train/validation/test fractions; must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("split fraction {name}={f} out of [0,1]")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions sum to {sum}, want 1")));
        }
        Ok(())
    }

    /// Disjoint, exhaustive split: a seeded shuffle, then
    /// `floor(train·n)` rows for training, `floor(val·n)` for validation,
    /// and the remainder for test.
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        self.validate()?;
        let n = data.len();
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng_from(split_seed(self.seed, &[stream::SPLIT])));
        let n_train = (self.train * n as f64).floor() as usize;
        let n_val = (self.val * n as f64).floor() as usize;
        let train = data.select(&indices[..n_train]);
        let val = data.select(&indices[n_train..n_train + n_val]);
        let test = data.select(&indices[n_train + n_val..]);
        Ok((train, val, test))
    }
}

const RAW_MAGIC: &str = "RATIO-DATA v1\n";
pub const RAW_HEADER_FILE: &str = "header.txt";
pub const RAW_DATA_FILE: &str = "data.bin";

/// Writes a dataset in the raw tensor format: a text header
/// `RATIO-DATA v1\n n=<int> d=<int> labeled=<0|1>\n` and a binary payload of
/// `n·d` little-endian f64 values followed by `n` little-endian i32 labels
/// when labeled.
pub fn write_raw(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let labeled = data.labels.is_some();
    let header = format!(
        "{RAW_MAGIC} n={} d={} labeled={}\n",
        data.len(),
        data.dim,
        labeled as u8
    );
    std::fs::write(dir.join(RAW_HEADER_FILE), header)?;

    let mut payload = Vec::with_capacity(data.len() * data.dim * 8);
    for p in &data.points {
        for v in p.as_slice() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(labels) = &data.labels {
        for &l in labels {
            payload.extend_from_slice(&(l as i32).to_le_bytes());
        }
    }
    std::fs::write(dir.join(RAW_DATA_FILE), payload)?;
    Ok(())
}

/// Loads a dataset written by [`write_raw`], validating the header, payload
/// length, and the `[0,1]` range of every value. Errors carry the byte
/// offset (header offsets refer to the header file, payload offsets to the
/// data file).
pub fn load_raw(dir: &Path) -> Result<Dataset> {
    let header_path = dir.join(RAW_HEADER_FILE);
    let header = std::fs::read_to_string(&header_path)?;
    if !header.starts_with(RAW_MAGIC) {
        return Err(Error::format(0, "missing RATIO-DATA v1 magic"));
    }
    let line = &header[RAW_MAGIC.len()..];
    let offset_of = |key: &str| -> u64 {
        (RAW_MAGIC.len() + line.find(key).unwrap_or(0)) as u64
    };
    let mut n: Option<usize> = None;
    let mut d: Option<usize> = None;
    let mut labeled: Option<bool> = None;
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::format(offset_of(token), format!("bad header token {token:?}")))?;
        let parse = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::format(offset_of(key), format!("bad value for {key}: {value:?}")))
        };
        match key {
            "n" => n = Some(parse()?),
            "d" => d = Some(parse()?),
            "labeled" => {
                labeled = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => {
                        return Err(Error::format(
                            offset_of(key),
                            format!("labeled must be 0 or 1, got {value:?}"),
                        ))
                    }
                })
            }
            _ => return Err(Error::format(offset_of(key), format!("unknown header key {key:?}"))),
        }
    }
    let (n, d, labeled) = match (n, d, labeled) {
        (Some(n), Some(d), Some(l)) => (n, d, l),
        _ => {
            return Err(Error::format(
                RAW_MAGIC.len() as u64,
                "header must define n, d, and labeled",
            ))
        }
    };
    if d == 0 {
        return Err(Error::format(offset_of("d"), "dimension must be positive"));
    }

    let payload = std::fs::read(dir.join(RAW_DATA_FILE))?;
    let want = n * d * 8 + if labeled { n * 4 } else { 0 };
    if payload.len() != want {
        return Err(Error::format(
            payload.len().min(want) as u64,
            format!("payload has {} bytes, header wants {want}", payload.len()),
        ));
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut values = Vec::with_capacity(d);
        for j in 0..d {
            let offset = (i * d + j) * 8;
            let v = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format(
                    offset as u64,
                    format!("value {v} outside [0,1] at row {i}, column {j}"),
                ));
            }
            values.push(v);
        }
        points.push(DenseVector::new(values));
    }
    let labels = if labeled {
        let base = n * d * 8;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let offset = base + i * 4;
            let l = i32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
            if l < 0 {
                return Err(Error::format(
                    offset as u64,
                    format!("negative label {l} at row {i}"),
                ));
            }
            labels.push(l as usize);
        }
        Some(labels)
    } else {
        None
    };

    Ok(Dataset {
        points,
        labels,
        dim: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture_spec(n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::GaussianMixture2d {
                classes: 2,
                means: vec![[-1.0, -1.0], [1.0, 1.0]],
                sigma: 0.4,
                n,
            },
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for spec in [
            mixture_spec(50, 7),
            DatasetSpec {
                kind: DatasetKind::Rings2d { n: 50 },
                seed: 7,
            },
            DatasetSpec {
                kind: DatasetKind::UniformNoise {
                    shape: vec![4],
                    n: 20,
                },
                seed: 7,
            },
        ] {
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mixture_is_roughly_balanced() {
        let data = generate(&mixture_spec(1000, 42)).unwrap();
        let labels = data.labels.as_ref().unwrap();
        let zeros = labels.iter().filter(|&&l| l == 0).count() as f64;
        assert!((zeros / 1000.0 - 0.5).abs() <= 0.05, "balance {zeros}");
        assert!(data
            .points
            .iter()
            .all(|p| p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn ring_points_avoid_the_core_disk() {
        let data = generate(&DatasetSpec {
            kind: DatasetKind::Rings2d { n: 500 },
            seed: 3,
        })
        .unwrap();
        for p in &data.points {
            let wx = p[0] * 2.0 * WORLD_HALF_EXTENT - WORLD_HALF_EXTENT;
            let wy = p[1] * 2.0 * WORLD_HALF_EXTENT - WORLD_HALF_EXTENT;
            let r = (wx * wx + wy * wy).sqrt();
            assert!(r >= RING_INNER_RADIUS - 1e-9 && r <= RING_OUTER_RADIUS + 1e-9);
        }
        assert!(data.labels.is_none());
    }

    #[test]
    fn uniform_noise_is_reproducible_and_in_range() {
        let spec = DatasetSpec {
            kind: DatasetKind::UniformNoise {
                shape: vec![4],
                n: 1,
            },
            seed: 11,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.points[0], b.points[0]);
        assert_eq!(a.dim, 4);
        assert!(a.points[0].as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn width_one_kernel_is_bit_equal_to_uniform() {
        let uniform = generate(&DatasetSpec {
            kind: DatasetKind::UniformNoise {
                shape: vec![3, 4],
                n: 5,
            },
            seed: 19,
        })
        .unwrap();
        let smoothed = generate(&DatasetSpec {
            kind: DatasetKind::SmoothedNoise {
                shape: vec![3, 4],
                n: 5,
                kernel_width: 1,
            },
            seed: 19,
        })
        .unwrap();
        assert_eq!(uniform.points, smoothed.points);
    }

    #[test]
    fn smoothing_reduces_neighbor_differences() {
        let shape = vec![8, 8];
        let rough = generate(&DatasetSpec {
            kind: DatasetKind::UniformNoise {
                shape: shape.clone(),
                n: 20,
            },
            seed: 23,
        })
        .unwrap();
        let smooth = generate(&DatasetSpec {
            kind: DatasetKind::SmoothedNoise {
                shape,
                n: 20,
                kernel_width: 3,
            },
            seed: 23,
        })
        .unwrap();
        let roughness = |data: &Dataset| -> f64 {
            let mut total = 0.0;
            for p in &data.points {
                for y in 0..8 {
                    for x in 0..7 {
                        total += (p[y * 8 + x + 1] - p[y * 8 + x]).abs();
                    }
                }
            }
            total / data.len() as f64
        };
        assert!(roughness(&smooth) < roughness(&rough));
        for p in &smooth.points {
            assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn even_kernel_width_is_rejected() {
        let spec = DatasetSpec {
            kind: DatasetKind::SmoothedNoise {
                shape: vec![4, 4],
                n: 1,
                kernel_width: 2,
            },
            seed: 0,
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert!(generate(&DatasetSpec {
            kind: DatasetKind::Rings2d { n: 0 },
            seed: 0
        })
        .is_err());
        assert!(generate(&DatasetSpec {
            kind: DatasetKind::UniformNoise {
                shape: vec![2],
                n: 0
            },
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let data = generate(&mixture_spec(103, 5)).unwrap();
        let spec = SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 9,
        };
        let (train, val, test) = spec.split(&data).unwrap();
        assert_eq!(train.len(), 61); // floor(0.6·103)
        assert_eq!(val.len(), 20); // floor(0.2·103)
        assert_eq!(train.len() + val.len() + test.len(), 103);
        let (train2, ..) = spec.split(&data).unwrap();
        assert_eq!(train.points, train2.points);

        // Disjointness: every original row appears exactly once across the
        // three parts (points are continuous, collisions have measure zero).
        let mut seen: Vec<[u64; 2]> = Vec::new();
        for part in [&train, &val, &test] {
            for p in &part.points {
                seen.push([p[0].to_bits(), p[1].to_bits()]);
            }
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 103);
    }

    #[test]
    fn bad_split_fractions_are_rejected() {
        let bad = SplitSpec {
            train: 0.5,
            val: 0.2,
            test: 0.2,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&mixture_spec(8, 2)).unwrap();
        write_raw(&data, dir.path()).unwrap();
        let loaded = load_raw(dir.path()).unwrap();
        assert_eq!(data, loaded);
    }

    #[test]
    fn unlabeled_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&DatasetSpec {
            kind: DatasetKind::UniformNoise {
                shape: vec![3],
                n: 4,
            },
            seed: 1,
        })
        .unwrap();
        write_raw(&data, dir.path()).unwrap();
        let loaded = load_raw(dir.path()).unwrap();
        assert_eq!(data, loaded);
    }

    #[test]
    fn truncated_payload_reports_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&mixture_spec(4, 2)).unwrap();
        write_raw(&data, dir.path()).unwrap();
        let bin = dir.path().join(RAW_DATA_FILE);
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&bin, bytes).unwrap();
        assert!(matches!(
            load_raw(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn out_of_range_value_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset {
            points: vec![DenseVector::new(vec![0.5, 0.5])],
            labels: None,
            dim: 2,
        };
        write_raw(&data, dir.path()).unwrap();
        let bin = dir.path().join(RAW_DATA_FILE);
        let mut bytes = std::fs::read(&bin).unwrap();
        let bad = (300.0f64 / 255.0).to_le_bytes();
        bytes[8..16].copy_from_slice(&bad);
        std::fs::write(&bin, bytes).unwrap();
        match load_raw(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected result {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(RAW_HEADER_FILE), "WRONG v9\n").unwrap();
        std::fs::write(dir.path().join(RAW_DATA_FILE), b"").unwrap();
        assert!(matches!(load_raw(dir.path()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn subsample_is_deterministic_and_bounded() {
        let data = generate(&mixture_spec(50, 4)).unwrap();
        let a = data.subsample(10, 77);
        let b = data.subsample(10, 77);
        assert_eq!(a.points, b.points);
        assert_eq!(a.len(), 10);
        assert_eq!(data.subsample(500, 77).len(), 50);
    }
}
