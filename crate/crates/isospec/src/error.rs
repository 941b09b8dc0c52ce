use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Arguments outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A dense matrix or store would exceed the configured size limit.
    #[error("dimension {dim} exceeds cap {cap}")]
    Cap { dim: usize, cap: usize },

    /// Inputs that are well formed but inconsistent with each other.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Read, write or parse failures of external data.
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn io(msg: impl Into<String>) -> Error {
    Error::Io(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
