//! Crate-wide error type.
//!
//! Variants are grouped by the exit-code category the CLI maps them to:
//! configuration (2), data (3), model (4).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or flag combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// JSON parse failure; the serde error carries line/column context.
    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// File system failure while reading or writing data files.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Missing, corrupt, or incompatible model file, or model misuse.
    #[error("model error: {0}")]
    Model(String),

    /// Failure while processing one dialog of a batch.
    #[error("dialog {index}: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn at_dialog(self, index: usize) -> Self {
        Error::Stage {
            index,
            source: Box::new(self),
        }
    }

    /// Process exit code for this error: 2 config, 3 data, 4 model.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 3,
            Error::Model(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
