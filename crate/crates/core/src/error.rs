use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("gap in half-hourly series at {0}")]
    Gap(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("incompatible checkpoint version {found} (expected {expected})")]
    Incompatible { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than configuration or code.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Parse { .. }
                | Error::Alignment(_)
                | Error::Gap(_)
                | Error::UndefinedMetric(_)
                | Error::Integrity(_)
                | Error::Incompatible { .. }
                | Error::Io { .. }
        )
    }
}
