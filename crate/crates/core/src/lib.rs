//! Simulation and training workbench for neural Wi-Fi FTM ranging trained
//! without ground truth: raw burst measurements go through a bounded MLP,
//! an EKF turns the ranging into a trajectory, and the rigid-alignment
//! mismatch against a dead-reckoned reference trajectory is the training
//! cost.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ftm_sim;
pub mod fusion;
pub mod geom;
pub mod pdr;
pub mod positioning;
pub mod ranging_nn;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
