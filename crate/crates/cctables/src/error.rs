use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("margin {value} at position {index} is outside [1, {max}]")]
    MarginOutOfRange { index: usize, value: i128, max: u64 },

    #[error("need at least 2 collectors, got {m}")]
    DimensionError { m: usize },

    #[error("cell index {index} on axis {axis} is outside [1, {size}]")]
    CellOutOfRange { axis: usize, index: usize, size: usize },

    #[error("invalid specification: {0}")]
    SpecError(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("resource limit exceeded: needs {required}, cap is {cap}")]
    ResourceLimit { required: u64, cap: u64 },

    #[error("sequence did not converge: {0}")]
    NoConvergence(String),

    #[error("cannot classify: {0}")]
    Unclassifiable(String),

    #[error("empty input")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, Error>;
