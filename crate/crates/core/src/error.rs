use thiserror::Error;

pub type Result<T> = std::result::Result<T, RauError>;

#[derive(Debug, Error)]
pub enum RauError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("invalid uncertainty set: {0}")]
    InvalidSet(String),

    #[error("unsupported geometry: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("adversary did not converge after {iterations} iterations (residual {residual:e})")]
    AdversaryNonConvergence { iterations: usize, residual: f64 },

    #[error("assignment violates invariants: {0}")]
    InvalidAssignment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
