use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("nodes {a} and {b} are on different levels ({level_a} vs {level_b})")]
    LevelMismatch {
        a: usize,
        b: usize,
        level_a: u32,
        level_b: u32,
    },

    /// Kernel or expansion evaluated at coincident points.
    #[error("singular evaluation: target coincides with expansion center")]
    SingularEvaluation,

    /// The multipole acceptance criterion does not hold for the requested evaluation.
    #[error("MAC violated: ratio {ratio} is not below 1")]
    MacViolation { ratio: f64 },

    #[error("non-finite source value {value} at ({x}, {y}, {z})")]
    NonFinite { value: f64, x: f64, y: f64, z: f64 },

    #[error("interaction lists do not cover the domain for leaf {leaf}: {detail}")]
    CoverageFailure { leaf: usize, detail: String },

    #[error("order mismatch: requested p = {requested}, available up to {available}")]
    OrderMismatch { requested: usize, available: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
