use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
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

    #[error("invalid heading {0}: expected one of 0, 90, 180, 270")]
    InvalidHeading(i64),

    #[error("invalid image key {0:?}: expected \"<point_id>#<heading>\"")]
    InvalidKey(String),

    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("unknown key {0}")]
    UnknownKey(String),

    #[error("invalid judgment: {0}")]
    InvalidJudgment(String),

    #[error("requested {requested} items but only {available} are available")]
    SizeExceeded { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("key sets differ: {0}")]
    KeyMismatch(String),

    #[error("dimension mismatch at row {row}: expected {expected}, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("zero vector at row {row} ({key})")]
    ZeroVector { row: usize, key: String },

    #[error("endpoint error{}: {message}", request_id.as_ref().map(|id| format!(" (request {id})")).unwrap_or_default())]
    Endpoint {
        message: String,
        request_id: Option<String>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

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
}
