//! Crate-wide error type.
//!
//! Variants are grouped by the exit code the CLI maps them to: usage (1),
//! data (2) and contract violations (3).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("missing artifact {path}: run `erank {prerequisite}` first")]
    MissingArtifact { path: PathBuf, prerequisite: String },

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("field `{field}` is empty across the collection")]
    FieldEmpty { field: String },

    #[error("query has no tokens; score is undefined")]
    EmptyQuery,

    #[error("feature layout mismatch: model has {model} weights, vector has {vector} values")]
    LayoutMismatch { model: usize, vector: usize },

    #[error("embedding store corrupt: {0}")]
    CorruptStore(String),

    #[error("invariant violated: {0}")]
    Contract(String),
}

impl Error {
    /// Exit code for the CLI: 1 usage, 2 data, 3 contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::MissingArtifact { .. }
            | Error::CorruptStore(_) => 2,
            Error::Config(_)
            | Error::UnknownEntity(_)
            | Error::UnknownRelation(_)
            | Error::FieldEmpty { .. }
            | Error::EmptyQuery
            | Error::LayoutMismatch { .. }
            | Error::Contract(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
