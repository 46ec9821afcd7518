use thiserror::Error;

use crate::bme::PatternPmf;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sampling domain is empty or carries no Gaussian mass")]
    EmptyDomain,

    #[error("starting point ({0}, {1}) lies outside the triangle union")]
    InfeasibleStart(f64, f64),

    #[error("degenerate triangle (signed area {0:e})")]
    DegenerateTriangle(f64),

    #[error("nodes {0} and {1} coincide; tessellation is degenerate")]
    DegenerateTessellation(usize, usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("covariance matrix could not be factorized even with jitter {0:e}")]
    FactorizationFailure(f64),

    #[error("target marginal is positive at pair cell {cell} where the current marginal is zero")]
    AbsoluteContinuityViolation { cell: usize },

    #[error("iterative fitting did not converge: marginal deviation {deviation:e} after {sweeps} sweeps")]
    NotConverged {
        deviation: f64,
        sweeps: usize,
        best: Box<PatternPmf>,
    },

    #[error("category {0} has no region in the truncation map")]
    UnmappableCategory(u32),

    #[error("unknown category label {0}")]
    UnknownCategory(u32),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
