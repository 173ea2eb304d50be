use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("context out of bound: |z|_inf = {norm} exceeds declared B = {bound}")]
    ContextOutOfBound { norm: f64, bound: f64 },

    #[error("strategy rejected: {0}")]
    StrategyRejected(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("grid too large: {points} points exceeds limit {limit}; use the alternating solver instead")]
    GridTooLarge { points: f64, limit: f64 },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("specification rejected: {0}")]
    SpecRejected(String),

    #[error("step {t} outside horizon 1..={horizon}")]
    OutOfRange { t: usize, horizon: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
