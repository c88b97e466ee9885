use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A conversation or corpus failed validation. `line` is 1-based when the
    /// record came from a JSONL file.
    #[error("{}invalid conversation{}: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), id.as_ref().map(|i| format!(" {i:?}")).unwrap_or_default())]
    Conversation {
        line: Option<usize>,
        id: Option<String>,
        reason: String,
    },

    #[error("matrix file {}: {reason}", path.display())]
    MatrixFormat { path: PathBuf, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("row {row} has zero norm")]
    ZeroRow { row: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Non-retryable HTTP status, or a body the wire format cannot decode.
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },

    /// Network-level failure or retryable status after all retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// A model reply that could not be parsed into the expected shape, even
    /// after a corrective reprompt.
    #[error("unusable model reply: {0}")]
    Reply(String),

    #[error("offline mode: no cached response for request {0}")]
    CacheMiss(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures caused by an external model service rather than by the
    /// caller's inputs.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::Provider { .. } | Error::Transport(_) | Error::CacheMiss(_)
        )
    }
}
