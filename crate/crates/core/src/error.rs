use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at `{node}`: {reason}")]
    Shape { node: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error at node `{node}`, field `{field}`: {reason}")]
    Parse {
        node: String,
        field: String,
        reason: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model has no prunable batch-norm layers")]
    Unprunable,

    #[error("surgery error at `{node}` channel {channel}: {reason}")]
    Surgery {
        node: String,
        channel: usize,
        reason: String,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("event stream error: {0}")]
    Stream(String),

    #[error("adapter failure: {0}")]
    Adapter(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors a user can fix by correcting inputs or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::Input(_)
                | Error::Shape { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
