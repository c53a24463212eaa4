use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension { context: &'static str, expected: String, actual: String },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate collision direction between agents {i} and {j} (separation {separation:.3e} m)")]
    DegenerateDirection { i: usize, j: usize, separation: f64 },

    #[error("gain design failed: {0}")]
    GainDesign(String),

    #[error("quadratic program not solved: {0}")]
    Solver(String),

    #[error("mission aborted at step {step}: {reason}")]
    MissionAborted { step: usize, reason: String },

    #[error("serialization: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension { context, expected: expected.to_string(), actual: actual.to_string() }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument { name, reason: reason.into() }
}
