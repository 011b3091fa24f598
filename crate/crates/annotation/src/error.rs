use std::path::PathBuf;

use faithscore::meta_eval::FieldError;
use faithscore::InputError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown task set {0:?}")]
    UnknownTaskSet(String),
    #[error("task set {0:?} already exists")]
    TaskSetExists(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("no image with hash {0}")]
    UnknownImage(String),
    #[error("stale base version; current version is {current}")]
    Conflict { current: u64 },
    #[error("invalid annotation: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldError>),
    #[error("nothing to export for task set {0:?}")]
    NothingToExport(String),
    #[error("invalid id: {0}")]
    InvalidId(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store document {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Input(#[from] InputError),
}

impl AnnotationError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> AnnotationError {
        AnnotationError::Io {
            path: path.into(),
            source,
        }
    }
}
