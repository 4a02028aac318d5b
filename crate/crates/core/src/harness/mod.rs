//! Scenario configuration, Monte-Carlo driver and result emission.

pub mod config;
pub mod emit;
pub mod rng;
pub mod runner;
pub mod svg;

pub use config::{load_config, EstimatorKind, Scenario, ScenarioConfig, Topology};
pub use runner::{run_monte_carlo, run_trial, McResult, TrialTrace};
