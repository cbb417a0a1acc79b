use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{context}: expected {expected_width}x{expected_height}, found {found_width}x{found_height}")]
    DimensionMismatch {
        context: String,
        expected_width: usize,
        expected_height: usize,
        found_width: usize,
        found_height: usize,
    },

    #[error("no frames matched pattern `{pattern}` in {dir}")]
    NoFramesMatched { dir: PathBuf, pattern: String },

    #[error("vector length {found} does not match expected {expected} ({context})")]
    LengthMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("conjugate gradient did not reach tolerance {tol:e} within {iterations} iterations (achieved residual {achieved:e})")]
    CgNoConvergence {
        iterations: usize,
        tol: f64,
        achieved: f64,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("missing saliency map {0} (pass --allow-missing-saliency to substitute zeros)")]
    MissingSaliency(PathBuf),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
