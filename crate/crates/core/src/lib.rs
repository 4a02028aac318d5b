//! Distributed robust state estimation for uncertain coupled networks.
//!
//! Each node runs a regularized, robustified Kalman-type recursion that
//! exchanges only `(x̂, P)` with its neighbors once per step.

pub mod baselines;
pub mod comms;
pub mod error;
pub mod estimator;
pub mod feasibility;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod tuner;

pub use error::{Error, Result};
