use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("class index {index} out of range for {k} classes")]
    Index { index: usize, k: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// A NaN or infinity showed up where a finite value was required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no convergence after {iterations} iterations: {detail}")]
    Convergence { iterations: usize, detail: String },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("parse error in {path} at row {row}, column '{column}': {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        detail: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line harness: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Format { .. } | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Domain(_)
            | Error::Index { .. }
            | Error::Shape { .. }
            | Error::Numeric(_)
            | Error::Convergence { .. } => 3,
        }
    }
}
