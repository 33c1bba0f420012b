use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the explanation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tag: {0}")]
    Tag(String),

    #[error("manifest error at {}, field `{field}`: {message}", location(*.record))]
    Manifest {
        /// Zero-based record index; `None` for the header line.
        record: Option<usize>,
        field: String,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("missing embedding for text {0:?}")]
    MissingEmbedding(String),

    #[error("missing record {0:?}")]
    MissingRecord(String),

    #[error("bridge transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("training requires both labels, found only `{0}`")]
    SingleClass(&'static str),

    #[error("loss diverged at {stage} {index}")]
    Divergence { stage: &'static str, index: usize },

    #[error("degenerate concept direction for {0:?}: target and anchor embeddings coincide")]
    DegenerateDirection(String),

    #[error("objective vectors have different lengths ({0} vs {1})")]
    ObjectiveLength(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location(record: Option<usize>) -> String {
    match record {
        Some(i) => format!("record {i}"),
        None => "header".into(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(
        record: Option<usize>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Manifest {
            record,
            field: field.into(),
            message: message.into(),
        }
    }

    /// Input-validation failures, as opposed to runtime failures
    /// (I/O, transport, numerical divergence).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Tag(_)
                | Error::Manifest { .. }
                | Error::DimensionMismatch { .. }
                | Error::MissingEmbedding(_)
                | Error::MissingRecord(_)
                | Error::SingleClass(_)
                | Error::ObjectiveLength(..)
                | Error::Config(_)
                | Error::Invalid(_)
                | Error::Json(_)
        )
    }
}
