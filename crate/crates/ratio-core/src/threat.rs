//! Threat models: l_p balls intersected with the input box.
//!
//! An attack may move a point anywhere inside `B_p(x, ε) ∩ [0,1]^d`. The
//! projection onto that intersection uses alternating projections (ball,
//! then box) rather than an exact KKT solve: both sets are convex and the
//! intersection always contains `x`, so the iteration converges to a
//! feasible point, and PGD only needs feasibility, not exact optimality.

use serde::{Deserialize, Serialize};

use crate::vector::DenseVector;
use crate::{Error, Result};

/// Slack allowed by the membership test, absorbing projection round-off.
pub const MEMBERSHIP_TOL: f64 = 1e-7;

/// Alternating projection stops when one full round moves the point less
/// than this in the l∞ sense.
const CONVERGENCE_TOL: f64 = 1e-9;

/// Hard cap on alternating-projection rounds.
const MAX_ROUNDS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Linf,
}

/// An l_p ball of radius `epsilon` around a center, always intersected with
/// the unit box when used for membership or projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    pub norm: Norm,
    pub epsilon: f64,
}

impl ThreatModel {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "threat model radius must be non-negative, got {epsilon}"
            )));
        }
        Ok(ThreatModel { norm, epsilon })
    }

    pub fn l2(epsilon: f64) -> Result<Self> {
        Self::new(Norm::L2, epsilon)
    }

    pub fn linf(epsilon: f64) -> Result<Self> {
        Self::new(Norm::Linf, epsilon)
    }

    fn distance(&self, z: &DenseVector, x: &DenseVector) -> f64 {
        match self.norm {
            Norm::L2 => z.l2_distance(x),
            Norm::Linf => z.linf_distance(x),
        }
    }

    /// Membership test: `‖z−x‖_p ≤ ε` and `z ∈ [0,1]^d`, both within
    /// [`MEMBERSHIP_TOL`].
    pub fn contains(&self, z: &DenseVector, x: &DenseVector) -> bool {
        self.distance(z, x) <= self.epsilon + MEMBERSHIP_TOL && z.in_unit_box(MEMBERSHIP_TOL)
    }

    fn project_ball(&self, point: &mut DenseVector, x: &DenseVector) {
        match self.norm {
            Norm::L2 => {
                let dist = point.l2_distance(x);
                if dist > self.epsilon {
                    // Radial scaling onto the sphere; at ε=0 the point
                    // collapses onto the center exactly.
                    let scale = if dist > 0.0 { self.epsilon / dist } else { 0.0 };
                    for (p, &c) in point.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *p = c + (*p - c) * scale;
                    }
                }
            }
            Norm::Linf => {
                for (p, &c) in point.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *p = p.clamp(c - self.epsilon, c + self.epsilon);
                }
            }
        }
    }

    /// Projects `z` onto `B_p(x, ε) ∩ [0,1]^d`.
    ///
    /// Alternating projection, ball first then box, iterated to a fixed
    /// point (movement below 1e-9, at most 50 rounds). The box clamp runs
    /// last, so the result is exactly box-feasible and ball-feasible within
    /// [`MEMBERSHIP_TOL`].
    pub fn project(&self, z: &DenseVector, x: &DenseVector) -> DenseVector {
        assert_eq!(z.dim(), x.dim(), "projection: dimension mismatch");
        let mut current = z.clone();
        for _ in 0..MAX_ROUNDS {
            let before = current.clone();
            self.project_ball(&mut current, x);
            for p in current.as_mut_slice() {
                *p = p.clamp(0.0, 1.0);
            }
            if current.linf_distance(&before) < CONVERGENCE_TOL {
                break;
            }
        }
        current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn feasible_point_is_unchanged() {
        let tm = ThreatModel::l2(0.5).unwrap();
        let x = DenseVector::new(vec![0.5, 0.5]);
        let z = DenseVector::new(vec![0.6, 0.4]);
        assert_eq!(tm.project(&z, &x), z);
    }

    #[test]
    fn l2_radial_scaling_onto_sphere() {
        // z = x + 2u with box slack in a high-dimensional ball: projection
        // lands at x + u.
        let d = 16;
        let tm = ThreatModel::l2(0.1).unwrap();
        let x = DenseVector::new(vec![0.5; d]);
        let mut u = vec![0.0; d];
        u[3] = 0.1;
        let mut z = x.clone();
        z.scaled_add(2.0, &DenseVector::new(u.clone()));
        let proj = tm.project(&z, &x);
        let mut expected = x.clone();
        expected.scaled_add(1.0, &DenseVector::new(u));
        assert_close(proj.l2_distance(&expected), 0.0, 1e-12);
    }

    #[test]
    fn linf_coordinate_clamp() {
        let tm = ThreatModel::linf(0.1).unwrap();
        let x = DenseVector::new(vec![0.5]);
        let z = DenseVector::new(vec![0.95]);
        assert_eq!(tm.project(&z, &x).as_slice(), &[0.6]);
    }

    #[test]
    fn zero_radius_returns_center() {
        let tm = ThreatModel::l2(0.0).unwrap();
        let x = DenseVector::new(vec![0.3, 0.8]);
        let z = DenseVector::new(vec![0.9, 0.1]);
        assert_eq!(tm.project(&z, &x), x);
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(ThreatModel::l2(-0.1).is_err());
        assert!(ThreatModel::new(Norm::Linf, f64::NAN).is_err());
    }

    #[test]
    fn membership_tolerance() {
        let tm = ThreatModel::l2(1.0).unwrap();
        let x = DenseVector::new(vec![0.5, 0.5]);
        let z = DenseVector::new(vec![0.5 + 1.0 + 5e-8, 0.5]);
        // Slightly outside the ball but off the box; membership tolerance
        // only forgives the norm, not a box violation.
        assert!(!z.in_unit_box(0.0));
        let inside = DenseVector::new(vec![1.0, 0.5]);
        assert!(tm.contains(&inside, &x));
    }

    proptest! {
        #[test]
        fn projection_feasible_and_idempotent(
            coords in proptest::collection::vec(-0.5f64..1.5, 2..8),
            center in proptest::collection::vec(0.0f64..1.0, 2..8),
            eps in 0.0f64..2.0,
            use_linf in proptest::bool::ANY,
        ) {
            let d = coords.len().min(center.len());
            let z = DenseVector::new(coords[..d].to_vec());
            let x = DenseVector::new(center[..d].to_vec());
            let tm = if use_linf { ThreatModel::linf(eps).unwrap() } else { ThreatModel::l2(eps).unwrap() };
            let p1 = tm.project(&z, &x);
            prop_assert!(tm.contains(&p1, &x));
            let p2 = tm.project(&p1, &x);
            prop_assert!(p1.linf_distance(&p2) < 1e-9);
        }
    }
}
