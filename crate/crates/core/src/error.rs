use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of bounds for {what} with {len} entries")]
    Bounds {
        what: String,
        index: usize,
        len: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown category {value:?} in column `{column}` at row {row}")]
    UnknownCategory {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid value {value:?} in column `{column}` at row {row}: {message}")]
    InvalidCell {
        column: String,
        row: usize,
        value: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "training diverged at epoch {epoch}, batch {batch} (last good checkpoint: {last_good})"
    )]
    Divergence {
        epoch: usize,
        batch: usize,
        last_good: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Bounds { .. } => "bounds",
            Error::Schema(_) => "schema",
            Error::Config { .. } => "config",
            Error::UnknownCategory { .. } | Error::InvalidCell { .. } => "data",
            Error::Domain(_) => "domain",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
