//! Error type shared across the crate, with CLI exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HydroError>;

#[derive(Debug, Error)]
pub enum HydroError {
    /// Invalid configuration or invalid arguments to an operation.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be parsed; names the offending line.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Inconsistent or invalid data (gaps, misalignment, bad values).
    #[error("data error: {0}")]
    Data(String),

    /// Dimension mismatch between two objects that must agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN/Inf or other numerical breakdown.
    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HydroError {
    /// Exit code contract: 0 ok, 2 config error, 3 data error, 4 numeric fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            HydroError::Config(_) => 2,
            HydroError::Parse { .. } | HydroError::Data(_) | HydroError::Shape(_) => 3,
            HydroError::Numeric(_) => 4,
            HydroError::Io { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HydroError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
