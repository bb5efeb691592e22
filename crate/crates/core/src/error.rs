use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate {what} `{key}`")]
    Duplicate {
        path: PathBuf,
        line: usize,
        what: &'static str,
        key: String,
    },

    #[error("no score for document `{doc_id}` query #{query_index}")]
    MissingScore { doc_id: String, query_index: usize },

    #[error("cannot derive a threshold from an empty score set (p = {p})")]
    EmptyScores { p: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index format error: {0}")]
    IndexFormat(String),

    #[error("tokenizer mismatch: index was built with {index}, query side uses {query}")]
    TokenizerMismatch { index: String, query: String },

    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable classification, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Duplicate { .. } => "duplicate",
            Error::MissingScore { .. } => "missing_score",
            Error::EmptyScores { .. } => "empty_scores",
            Error::InvalidConfig(_) => "invalid_config",
            Error::IndexFormat(_) => "index_format",
            Error::TokenizerMismatch { .. } => "tokenizer_mismatch",
            Error::Eval(_) => "eval",
        }
    }
}
