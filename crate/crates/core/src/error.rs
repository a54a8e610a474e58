use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Structural defect in an input file (bad header, bad cell, mismatched shape).
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("negative {what} {value} for item {item} at week {week}")]
    NegativeQuantity {
        what: &'static str,
        item: usize,
        week: usize,
        value: i64,
    },

    #[error("demand trace covers {got} weeks, {needed} required")]
    TraceTooShort { needed: usize, got: usize },

    #[error("non-finite {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error("total training weight is zero")]
    ZeroWeight,

    #[error("empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::Format { .. }
            | Error::UnknownItem(_)
            | Error::NegativeQuantity { .. }
            | Error::TraceTooShort { .. }
            | Error::NonFinite { .. }
            | Error::ZeroWeight
            | Error::EmptyPartition(_) => ErrorKind::Data,
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::InvalidArgument(_) => ErrorKind::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Config,
    Internal,
}
