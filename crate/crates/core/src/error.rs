use thiserror::Error;

/// Errors raised by the numerical routines and the samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below tolerance)")]
    NotPsd { eigenvalue: f64 },

    #[error("covariance matrix is singular: {0}")]
    SingularCovariance(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model specification violates assumptions: {}", .0.join("; "))]
    Spec(Vec<String>),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no start converged ({starts} starts, best objective {best_objective:e}): {reason}")]
    NonConvergence {
        starts: usize,
        best_objective: f64,
        reason: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
