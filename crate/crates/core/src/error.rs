use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or missing input data. `line` is 1-based when known.
    #[error("{}", match .line { Some(l) => format!("line {l}: {}", .message), None => .message.clone() })]
    Corpus {
        line: Option<usize>,
        message: String,
    },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidToken { id: u32, size: usize },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("backend `{backend}` does not support gradients")]
    GradientUnsupported { backend: String },

    /// Transport failure talking to a remote metric server.
    #[error("connection to {endpoint} failed: {message}")]
    Connection { endpoint: String, message: String },

    /// The server answered, but with an error payload or a contract violation.
    #[error("metric server error: {0}")]
    Protocol(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Report(String),

    /// An error annotated with where it happened (candidate, case, step).
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn corpus(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Corpus {
            line,
            message: message.into(),
        }
    }
}
