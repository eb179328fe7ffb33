use thiserror::Error;

/// Errors raised by model construction, simulation and inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-positive step size {step} at index {index}")]
    NonPositiveStep { index: usize, step: f64 },

    #[error("insufficient data: need at least {needed}, got {got} ({context})")]
    InsufficientData {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("timestamps must be strictly increasing (violated at index {index})")]
    NonIncreasingTimestamps { index: usize },

    #[error("non-finite state encountered at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("timestamp {time} outside trajectory span [{start}, {end}]")]
    TimestampOutOfRange { time: f64, start: f64, end: f64 },

    #[error(
        "matrix of size {size} is not positive definite after jitter escalation to {max_jitter:e} \
         (condition estimate {condition_estimate:e})"
    )]
    FactorizationFailed {
        size: usize,
        max_jitter: f64,
        condition_estimate: f64,
    },

    #[error("non-finite objective at initialization (offending parameter: {parameter})")]
    NonFiniteObjective { parameter: String },

    #[error("degenerate local design matrix at sample {index}")]
    DegenerateDesign { index: usize },

    #[error("irregular time grid (relative step deviation {deviation:e}); use LOESS instead")]
    IrregularGrid { deviation: f64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
