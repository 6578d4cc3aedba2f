//! Desk-scale laboratory for robust classifier training on in- and
//! out-distribution data.
//!
//! The crate provides, end to end:
//!
//! * probability and threat-model primitives ([`prob`], [`threat`]),
//! * small differentiable classifiers with exact analytic gradients
//!   ([`model`]) and the SGD/Nesterov optimizer used to fit them ([`optim`]),
//! * projected-gradient attacks with momentum, restarts, and warm starts
//!   ([`attack`]),
//! * five training objectives (Plain, OE, AT, ACET, and the combined
//!   in/out adversarial objective) with a deterministic training loop
//!   ([`train`]),
//! * confidence calibration via temperature rescaling and ECE ([`calibration`]),
//! * the evaluation stack: robust accuracy, clean and worst-case OOD AUC,
//!   mean maximal confidence, and confidence-radius profiles ([`eval`]),
//! * visual counterfactual generation with budget sweeps ([`counterfactual`]),
//! * synthetic 2-D dataset generators and a raw tensor interchange format
//!   ([`data`]).
//!
//! Every operation is deterministic given its seed: repeated runs produce
//! byte-identical checkpoints, reports, and image grids.

pub mod attack;
pub mod calibration;
pub mod counterfactual;
pub mod data;
pub mod eval;
pub mod model;
pub mod optim;
pub mod prob;
pub mod seed;
pub mod threat;
pub mod train;
pub mod vector;

mod error;

pub use error::{Error, Result};
pub use vector::DenseVector;
