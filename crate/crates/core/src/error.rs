//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by any module in this crate.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not conform (matmul, hadamard, perturbation draws, ...).
    Dimension(String),
    /// An argument violates a documented precondition.
    InvalidInput(String),
    /// A public operation produced NaN or Inf.
    NonFinite(String),
    /// A perturbation direction is undefined (zero gradient / zero transformed gradient).
    DegenerateDirection(String),
    /// The baseline error sum in a corruption-error ratio is zero.
    DegenerateBaseline(String),
    /// Two values that must describe the same object disagree (net vs trace, config pair, ...).
    Consistency(String),
    /// A binary file does not conform to its declared layout.
    Format { path: PathBuf, msg: String },
    /// A config file is invalid; `line` is 1-based when the offending line is known.
    Config { line: Option<usize>, msg: String },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::DegenerateDirection(msg) => write!(f, "degenerate direction: {msg}"),
            Error::DegenerateBaseline(msg) => write!(f, "degenerate baseline: {msg}"),
            Error::Consistency(msg) => write!(f, "inconsistent arguments: {msg}"),
            Error::Format { path, msg } => write!(f, "format error in {}: {msg}", path.display()),
            Error::Config { line: Some(n), msg } => write!(f, "config error (line {n}): {msg}"),
            Error::Config { line: None, msg } => write!(f, "config error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
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

pub type Result<T> = std::result::Result<T, Error>;
