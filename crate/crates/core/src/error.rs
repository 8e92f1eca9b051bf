use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("causality violation for retweet {retweet_id}: retweet_ts {retweet_ts} < source_ts {source_ts}")]
    Causality {
        retweet_id: String,
        retweet_ts: i64,
        source_ts: i64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed RLE sequence: {0}")]
    MalformedSequence(String),

    #[error("undefined input: {0}")]
    Undefined(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64, trace: Vec<f64> },

    #[error("incompatible file format: {0}")]
    Format(String),

    #[error("key mismatch between prediction and truth: {0}")]
    KeyMismatch(String),

    #[error("unknown extractor '{0}'")]
    UnknownExtractor(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::UnknownExtractor(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
