use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the value-of-information library.
#[derive(Debug, Error)]
pub enum VoiError {
    #[error("no draws")]
    NoDraws,

    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("insufficient draws: {draws} rows for {predictors} predictors")]
    InsufficientDraws { draws: usize, predictors: usize },

    #[error("unknown column(s): {}", .0.join(", "))]
    UnknownColumns(Vec<String>),

    #[error("duplicate column name `{0}`")]
    DuplicateName(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing required field(s): {}", .0.join(", "))]
    MissingFields(Vec<String>),

    #[error("invalid model data: {0}")]
    InvalidData(String),

    #[error("column count mismatch: model expects {expected}, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no finite log-posterior after {0} initialisation attempts")]
    Initialisation(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = VoiError> = std::result::Result<T, E>;

impl VoiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VoiError::Io {
            path: path.into(),
            source,
        }
    }
}
