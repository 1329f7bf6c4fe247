use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the semseg pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate frame: every column was dropped during cleaning")]
    DegenerateFrame,

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("domain error at index {index}: {reason}")]
    Domain { index: usize, reason: String },

    #[error("timestamps not strictly increasing at index {index}")]
    TemporalOrder { index: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no segment has at least two usable features")]
    EmptyAnalysis,

    #[error("need at least two usable segments, found {0}")]
    InsufficientSegments(usize),

    #[error("no column matched any canonical segment")]
    EmptyCanonical,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("column {column}: {source}")]
    Column {
        column: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_column(column: &str, source: Error) -> Self {
        Error::Column {
            column: column.to_string(),
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
