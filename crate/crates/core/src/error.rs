use thiserror::Error;

/// Errors raised by the library.
///
/// Construction-time validation failures carry a short description of the
/// violated invariant. Index and shape mismatches on hot paths are programming
/// errors and panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action subset: {0}")]
    InvalidSubset(String),

    #[error("invalid reward vector: {0}")]
    InvalidReward(String),

    #[error("invalid simplex weights: {0}")]
    InvalidSimplex(String),

    #[error("invalid policy class: {0}")]
    InvalidPolicyClass(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("environment exhausted after {got} of {needed} rounds")]
    EnvironmentExhausted { needed: usize, got: usize },

    #[error("observed non-binary reward {value} in a zero-one reward setting")]
    NonBinaryReward { value: f64 },

    #[error("action {action} was observed with zero inclusion probability")]
    ZeroInclusion { action: usize },

    #[error("FTRL solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
