use std::path::PathBuf;

use crate::numerics::Precision;

/// Errors surfaced by every fallible operation in the crate.
///
/// The variants fall into three families that the CLI maps onto exit codes:
/// contract violations, IO/format problems, and numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("shape mismatch for {name}: stored {stored:?}, expected {expected:?}")]
    Shape { name: String, stored: (usize, usize), expected: (usize, usize) },

    #[error("refusing to cast {stored} checkpoint into a {requested} run")]
    PrecisionMismatch { stored: Precision, requested: Precision },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors that stem from a violated precondition.
    pub fn is_contract(&self) -> bool {
        matches!(self, Error::Contract(_))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite<T: crate::Scalar>(m: &crate::Matrix<T>, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contain non-finite values")))
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;
