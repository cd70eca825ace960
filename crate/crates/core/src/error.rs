use thiserror::Error;

/// Errors raised across the fitting pipeline.
#[derive(Debug, Error)]
pub enum GvssbError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("group `{0}` has no columns")]
    EmptyGroup(String),

    #[error("constant column cannot be standardized: {0}")]
    ConstantColumn(String),

    #[error("covariate `{name}` has {distinct} distinct values, need at least {required}")]
    TooFewDistinct {
        name: String,
        distinct: usize,
        required: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value in group {group} during sweep {sweep}: {what}")]
    NonFinite {
        group: usize,
        sweep: usize,
        what: String,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GvssbError>;
