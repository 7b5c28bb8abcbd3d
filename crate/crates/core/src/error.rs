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

    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("lesion {lesion_id} ({path}): {message}")]
    Lesion {
        lesion_id: String,
        path: PathBuf,
        message: String,
    },

    #[error("lesion {lesion_id} ({path}): mask shape {mask:?} does not match frame shape {frame:?}")]
    ShapeMismatch {
        lesion_id: String,
        path: PathBuf,
        frame: (usize, usize),
        mask: (usize, usize),
    },

    #[error("lesion {lesion_id} ({path}): unknown label {label:?}")]
    UnknownLabel {
        lesion_id: String,
        path: PathBuf,
        label: String,
    },

    #[error("duplicate lesion id {lesion_id} ({path})")]
    DuplicateLesion { lesion_id: String, path: PathBuf },

    #[error("MAT-file: {0}")]
    Mat(#[from] crate::data::mat5::MatError),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("both classes must be present")]
    SingleClass,

    #[error("model: {0}")]
    Model(String),

    #[error("experiment cell train={train} test={test}: {source}")]
    Cell {
        train: String,
        test: String,
        #[source]
        source: Box<Error>,
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

    /// True for errors caused by bad user input rather than by the runtime.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Model(_) => false,
            Error::Cell { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
