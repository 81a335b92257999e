use thiserror::Error;

/// Errors raised while building, certifying or simulating a scenario.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(String),

    #[error("coupling matrix is not a nonsingular M-matrix: {0}")]
    NotMMatrix(String),

    #[error("diagonal scaling failed: lambda_min(Q) = {lambda_min:e} after fallback")]
    ScalingFailed { lambda_min: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("quadrature did not converge: estimated error {achieved:e} > {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("persistency of excitation violated: {0}")]
    PersistencyOfExcitation(String),

    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("scenario rejected:\n{}", .0.join("\n"))]
    Assumptions(Vec<String>),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
