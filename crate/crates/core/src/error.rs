use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty calibration column")]
    EmptyColumn,

    #[error("non-finite score")]
    NonFiniteScore,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} requires at least {needed} observations, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("vine requires d ≥ 2")]
    VineDimension,

    #[error("invalid vine structure: {0}")]
    InvalidStructure(String),

    #[error("level curve unreachable")]
    LevelCurveUnreachable,

    #[error("degenerate level curve")]
    DegenerateLevelCurve,

    #[error("non-finite gradient component {0}")]
    NonFiniteGradient(usize),

    #[error("singular system at lambda = 0; use a ridge penalty lambda > 0")]
    SingularSystem,

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell at data row {row}, column `{column}`: `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no data rows")]
    NoDataRows,

    #[error("empty file")]
    EmptyFile,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("unsupported schema version {0}")]
    Schema(u64),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
