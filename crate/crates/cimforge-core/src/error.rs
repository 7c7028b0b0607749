//! Error type shared across the core toolkit.

use std::error::Error;
use std::fmt;

/// Errors produced by the core toolkit.
///
/// `Parse` covers malformed input files, `Validation` covers structurally
/// well-formed inputs that violate a documented contract (ranges, shapes,
/// graph invariants), and `Runtime` covers failures during execution such as
/// accumulator overflow.
#[derive(Debug)]
pub enum CoreError {
    /// Input file or document could not be parsed.
    Parse(String),
    /// Input violated a documented precondition or invariant.
    Validation(String),
    /// Execution failed (overflow, missing tensor, inconsistent trace).
    Runtime(String),
    /// Underlying I/O failure, with the path that was being accessed.
    Io { path: String, source: std::io::Error },
}

impl CoreError {
    pub fn parse(msg: impl Into<String>) -> Self {
        CoreError::Parse(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CoreError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CoreError::Runtime(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Parse(msg) => write!(f, "parse error: {msg}"),
            CoreError::Validation(msg) => write!(f, "validation error: {msg}"),
            CoreError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            CoreError::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl Error for CoreError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            CoreError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
