use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// The binary code of the input is empty, so the weighted average has a zero denominator.
    #[error("no hidden unit is active for this input")]
    NoActiveUnits,

    #[error("wrong dataset kind: {0}")]
    DatasetKind(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Ingest {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported model file version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("model file integrity check failed: {0}")]
    Checksum(String),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Shape { .. }
            | Error::Input(_)
            | Error::Calibration(_)
            | Error::DatasetKind(_)
            | Error::Ingest { .. }
            | Error::Version { .. }
            | Error::Checksum(_)
            | Error::Format(_) => ErrorCategory::Data,
            Error::Fit(_) | Error::NoActiveUnits | Error::Io { .. } => ErrorCategory::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            expected,
            actual,
            context,
        })
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Input(format!("{what} has a non-finite entry at index {i}"))),
    }
}
