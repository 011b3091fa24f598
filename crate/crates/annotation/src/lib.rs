//! Annotation workflow backend: task sets built from engine results,
//! per-annotator sessions, versioned submissions and export in the format
//! the meta-evaluation reads.

pub mod api;
mod error;
mod store;

pub use api::{router, serve};
pub use error::AnnotationError;
pub use store::{AnnotationTask, ExportedRecord, NextTask, Session, Store, StoredAnnotation, TaskSet, TaskSpec};
