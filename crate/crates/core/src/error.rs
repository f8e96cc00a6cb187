use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error in {file}: {message}")]
    Ingest { file: PathBuf, message: String },

    #[error("{file}:{line}: malformed record: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },

    /// The judge returned text that could not be validated against the template schema.
    #[error("judge output for template `{template}` failed validation: {message}")]
    JudgeFormat {
        template: String,
        message: String,
        raw_text: String,
    },

    #[error("unknown {field} label `{value}`")]
    Label { field: &'static str, value: String },

    #[error("judge transport error: {0}")]
    Transport(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no usable threshold: every stratum falls below the match-rate cutoff {0}")]
    NoUsableThreshold(f64),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

    /// True for errors caused by judge output rather than transport or input problems.
    pub fn is_judge_format(&self) -> bool {
        matches!(self, Error::JudgeFormat { .. } | Error::Label { .. })
    }
}
