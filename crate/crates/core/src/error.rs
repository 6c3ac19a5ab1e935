// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

use crate::backend::BackendErrorCode;

/// Errors produced by aspectprobe.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A data file row violated its format or an invariant.
    #[error("{file}:{line}: {rule}")]
    Parse {
        /// File being read.
        file: PathBuf,
        /// 1-based line number.
        line: usize,
        /// The violated rule.
        rule: String,
    },

    /// The backend rejected a request or could not serve it.
    #[error("backend error: {code}{}", detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Backend {
        /// Machine-readable error code, as carried on the wire.
        code: BackendErrorCode,
        /// Optional human-readable context.
        detail: Option<String>,
    },

    /// Transport failure talking to a remote backend.
    #[error("transport error: {0}")]
    Transport(String),

    /// Vector lengths do not agree.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension {
        /// Expected length.
        expected: usize,
        /// Actual length.
        actual: usize,
    },

    /// Caller supplied an argument outside the operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration could not be interpreted.
    #[error("configuration error: {0}")]
    Config(String),

    /// Underlying IO failure.
    #[error("io error on {path}: {source}")]
    Io {
        /// Path involved.
        path: PathBuf,
        /// Source error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure outside of line-oriented parsing.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV writing failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn backend(code: BackendErrorCode) -> Self {
        Error::Backend { code, detail: None }
    }

    pub(crate) fn backend_detail(code: BackendErrorCode, detail: impl Into<String>) -> Self {
        Error::Backend {
            code,
            detail: Some(detail.into()),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: usize, rule: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            rule: rule.into(),
        }
    }

    /// The backend error code, if this is a backend error.
    pub fn backend_code(&self) -> Option<BackendErrorCode> {
        match self {
            Error::Backend { code, .. } => Some(*code),
            _ => None,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
