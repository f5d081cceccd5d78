use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("degenerate network: layer {layer} has a non-finite or zero Frobenius norm")]
    DegenerateNet { layer: usize },

    #[error("training diverged at epoch {epoch}: non-finite gradient")]
    TrainingDiverged { epoch: usize },

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate bandwidth: all points coincide")]
    DegenerateBandwidth,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape error at line {line}: expected {expected} columns, found {found}")]
    Shape {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("refusing to overwrite existing file {}", .0.display())]
    AlreadyExists(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
