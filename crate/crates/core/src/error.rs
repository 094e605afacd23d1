use thiserror::Error;

/// Errors raised by index computations, solvers and simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration or input parameter is outside its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A lookup fell outside a tabulated range.
    #[error("value {value} outside tabulated range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    /// A numerical solver failed (typically a grid that is too small).
    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
