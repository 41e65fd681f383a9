use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FunadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FunadError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("probability {value:e} underflows the floor {floor:e}")]
    Underflow { value: f64, floor: f64 },

    #[error("memory bank is empty: {0}")]
    EmptyBank(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl FunadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FunadError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        FunadError::Argument(msg.into())
    }
}
