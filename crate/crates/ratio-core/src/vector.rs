//! Fixed-dimension numeric vectors.
//!
//! Inputs to classifiers live in `[0,1]^d`; perturbed points temporarily
//! leave the box during attack steps and are brought back by projection.
//! `DenseVector` is deliberately thin: it fixes the dimension at construction
//! and panics on mismatched arithmetic, which is a programming error rather
//! than a recoverable condition.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l2_distance(&self, other: &DenseVector) -> f64 {
        self.check_dim(other);
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &DenseVector) -> f64 {
        self.check_dim(other);
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += c * other`.
    pub fn scaled_add(&mut self, c: f64, other: &DenseVector) {
        self.check_dim(other);
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    /// True when every coordinate lies in `[0,1]` (within `tol`).
    pub fn in_unit_box(&self, tol: f64) -> bool {
        self.0.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
    }

    fn check_dim(&self, other: &DenseVector) {
        assert_eq!(
            self.0.len(),
            other.0.len(),
            "dimension mismatch: {} vs {}",
            self.0.len(),
            other.0.len()
        );
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        DenseVector(values)
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
