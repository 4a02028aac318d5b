use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration failed to parse or violates a schema rule. `path` is the
    /// JSON field path (e.g. `model.q[2]`).
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A matrix that must be inverted is singular or too badly conditioned.
    #[error("numerical error in {context}: condition estimate {condition:e}")]
    Numerical {
        context: &'static str,
        condition: f64,
    },

    #[error("simulation diverged at step {step} (node {node})")]
    Divergence { step: usize, node: usize },

    #[error("round mismatch: package for step {got} offered to bus at round {expected}")]
    RoundMismatch { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("round {round} barrier not reached: {published}/{expected} nodes published")]
    NotReady {
        round: usize,
        published: usize,
        expected: usize,
    },

    #[error("degenerate alpha = 1 for node {node}")]
    DegenerateAlpha { node: usize },

    #[error("node {node} has alpha > 0 but its neighbor coupling sum is {sum}")]
    DegenerateNeighborhood { node: usize, sum: f64 },

    #[error("robustified noise covariance for node {node} could not be made positive definite (last lambda {lambda:e})")]
    InfeasibleRobustification { node: usize, lambda: f64 },

    #[error("infeasible regularization weight {lambda:e}: {reason}")]
    InfeasibleLambda { lambda: f64, reason: String },

    #[error("covariance of node {node} lost positive definiteness at step {step}")]
    CovarianceCollapse { node: usize, step: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
