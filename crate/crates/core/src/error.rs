use thiserror::Error;

/// Errors surfaced by parameter validation, configuration checks, and I/O-free
/// numeric preconditions. Hot-path math never allocates one of these.
#[derive(Debug, Error)]
pub enum NemError {
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("dataset must contain at least one sample")]
    EmptyDataset,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("non-positive variance: {0}")]
    NonPositiveVariance(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NemError>;
