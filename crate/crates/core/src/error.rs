use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Every candidate weight vanished in log space; carries a diagnostic.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("sampling diverged at step {step} (t = {t})")]
    Sampling { step: usize, t: f64 },

    #[error("worker {worker} failed: {reason}")]
    Worker { worker: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Shape {
            expected,
            got,
            context,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI. Distinct classes get distinct codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Argument(_) => 2,
            Error::Config(_) | Error::Shape { .. } => 3,
            Error::Degenerate(_) | Error::Domain(_) | Error::Sampling { .. } => 4,
            Error::Worker { .. } => 5,
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => 1,
        }
    }
}

pub(crate) fn check_len(got: usize, expected: usize, context: &'static str) -> Result<()> {
    if got != expected {
        return Err(Error::shape(expected, got, context));
    }
    Ok(())
}
