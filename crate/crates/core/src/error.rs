//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration (bad file, missing key, impossible grid, ...).
    Config(String),
    /// An operation was called outside its contract (step on a done episode,
    /// out-of-range schedule index, mismatched shapes).
    Contract(String),
    /// Training produced a non-finite quantity; diagnostics carry the last
    /// known loss components.
    Numerical {
        message: String,
        diagnostics: Vec<(String, f64)>,
    },
    /// Malformed on-disk artifact (checkpoint, CSV).
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numerical {
                message,
                diagnostics,
            } => {
                write!(f, "numerical failure: {message}")?;
                for (k, v) in diagnostics {
                    write!(f, "; {k}={v}")?;
                }
                Ok(())
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
