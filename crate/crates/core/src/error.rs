use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point count {count} exceeds the cap of {cap}")]
    TooManyPoints { count: u128, cap: usize },

    #[error("point cloud invariant violated: {0}")]
    InvalidCloud(String),

    #[error("measure invariant violated: {0}")]
    InvalidMeasure(String),

    #[error("scale schedule invalid: {0}")]
    InvalidSchedule(String),

    #[error("solver did not converge at r = {scale}: residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        scale: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("circulant embedding failed: smallest eigenvalue {min:.3e} below -1e-8 * {max:.3e}")]
    EmbeddingFailed { min: f64, max: f64 },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("cell [{lo}, {hi}) carries measure but contains no cloud point")]
    EmptyCell { lo: f64, hi: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
