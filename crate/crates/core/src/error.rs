//! Error type shared by every module in the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the keyword-spotting engine.
#[derive(Debug)]
pub enum Error {
    /// Two operands had incompatible dimensions.
    DimMismatch { context: &'static str, expected: usize, got: usize },
    /// A tensor or container failed shape validation.
    Shape(String),
    /// A configuration value violated its invariant.
    InvalidConfig(String),
    /// An input argument was rejected (out-of-range label, empty sequence, ...).
    InvalidInput(String),
    /// A computation produced or received a non-finite value.
    NonFinite(String),
    /// A serialized artifact (SNW1, SNP1, WAV, CSV, TSV) failed to parse.
    Format(String),
    /// Training diverged: the loss became non-finite.
    Diverged { epoch: usize },
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
