//! Crate-wide error type with a stable category taxonomy.
//!
//! Every error maps to one of five categories (`io`, `data`, `shape`,
//! `model`, `numeric`) with a fixed process exit code each, so shell callers
//! can branch on failures without parsing prose.

use std::path::PathBuf;

/// Errors produced by data handling, inference, and the command layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem problem (missing file, unreadable path, failed write).
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or unusable input data (unparseable cells, bad labels,
    /// infeasible fold requests, empty datasets).
    #[error("{0}")]
    Data(String),

    /// Dimension mismatch between inputs that must agree.
    #[error("{0}")]
    Shape(String),

    /// Unreadable or incompatible model file.
    #[error("{0}")]
    Model(String),

    /// Numerical breakdown during inference (failed factorization,
    /// non-finite intermediate).
    #[error("iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },

    /// Invalid parameter value (non-positive variance, bad hyperparameter).
    #[error("{0}")]
    InvalidParameter(String),

    /// Evaluation outside a distribution's support.
    #[error("{0}")]
    Domain(String),
}

impl Error {
    /// Stable machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Data(_) => "data",
            Error::Shape(_) => "shape",
            Error::Model(_) => "model",
            Error::Numeric { .. } => "numeric",
            Error::InvalidParameter(_) => "data",
            Error::Domain(_) => "data",
        }
    }

    /// Process exit code for the category (0 is success, never an error).
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 2,
            "data" => 3,
            "shape" => 4,
            "model" => 5,
            "numeric" => 9,
            _ => 1,
        }
    }

    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
