use thiserror::Error;

/// Errors raised by the estimation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("IMU mounting references body {body}, but the chain has bodies 0..={last}")]
    InvalidBody { body: usize, last: usize },

    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),

    #[error("innovation covariance is singular at step {step} (condition number {condition:e})")]
    SingularInnovation { step: usize, condition: f64 },

    #[error("prior covariance is not symmetric positive definite")]
    InvalidPrior,

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("measurement batch out of order: index {index} follows {previous}")]
    OutOfOrder { previous: usize, index: usize },

    #[error("no measurements supplied")]
    EmptyData,

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
