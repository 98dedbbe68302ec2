//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by simulation, optimization, training and I/O.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration (violated invariants, mismatched dimensions).
    Config(String),
    /// Argument outside the mathematical domain of an operation.
    Domain(String),
    /// Operation called in the wrong state (e.g. stepping a finished episode).
    Protocol(String),
    /// Malformed caller-supplied data (non-finite fitness, empty demo set).
    Input(String),
    /// Numerical failure (non-finite loss or gradient, broken decomposition).
    Numerical(String),
    /// Malformed artifact file.
    Format(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
