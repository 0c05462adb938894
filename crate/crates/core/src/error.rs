use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 1,
/// data and ingestion problems with 2, everything else with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("specification error: {0}")]
    Spec(String),

    #[error("shape error at {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("ingestion error in {path} at byte offset {offset}: {detail}")]
    Ingestion {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("registry error: unknown architecture `{0}`")]
    Registry(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Registry(_) => 1,
            Error::Data(_) | Error::Ingestion { .. } | Error::Partition(_) | Error::Parse { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
