use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use faithscore::harness::SampleRecord;
use faithscore::meta_eval::AnnotationRecord;
use faithscore::{AtomicFact, Sample, SubSentence};

use crate::error::AnnotationError;

/// One unit of annotation work: a sample plus the machine output shown to
/// the annotator as a starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub sample: Sample,
    pub subsentences: Vec<SubSentence>,
    pub facts: Vec<AtomicFact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub id: String,
    /// Directory image locators resolve against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    /// Builds tasks from engine results, in record order.
    pub fn from_records(id: impl Into<String>, records: &[SampleRecord], image_root: Option<PathBuf>) -> TaskSet {
        TaskSet {
            id: id.into(),
            image_root,
            tasks: records
                .iter()
                .map(|r| TaskSpec {
                    task_id: r.sample.id.clone(),
                    sample: r.sample.clone(),
                    subsentences: r.subsentences.clone(),
                    facts: r.facts.clone(),
                })
                .collect(),
        }
    }
}

/// A task as handed to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_set_id: String,
    pub index: usize,
    pub total: usize,
    pub version: u64,
    pub image_url: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task(Box<AnnotationTask>),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub annotator_id: String,
    pub task_set_id: String,
    pub created_at: DateTime<Utc>,
}

/// What is stored per (annotator, sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    pub version: u64,
    pub submitted_at: DateTime<Utc>,
    pub record: AnnotationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedRecord {
    pub file: String,
    pub record: AnnotationRecord,
}

/// Keeps ids usable as single path components.
fn path_component(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !out.is_empty()) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AnnotationError> {
    let bytes = std::fs::read(path).map_err(|e| AnnotationError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| AnnotationError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AnnotationError> {
    let dir = path.parent().expect("store paths have a parent");
    std::fs::create_dir_all(dir).map_err(|e| AnnotationError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AnnotationError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AnnotationError::io(path, e))?;
    tmp.persist(path).map_err(|e| AnnotationError::io(path, e.error))?;
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store documents serialize");
    bytes.push(b'\n');
    bytes
}

/// File-backed annotation store.
///
/// Layout under `root`:
/// `task_sets/{set}.json`, `sessions/{token}.json` and
/// `annotations/{set}/{annotator}/{sample}.json`.
pub struct Store {
    root: PathBuf,
    sessions: RwLock<HashMap<String, Session>>,
    writes: Mutex<()>,
}

impl Store {
    /// Opens (or creates) a store and reloads persisted sessions.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, AnnotationError> {
        let root = root.into();
        let session_dir = root.join("sessions");
        std::fs::create_dir_all(&session_dir).map_err(|e| AnnotationError::io(&session_dir, e))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&session_dir).map_err(|e| AnnotationError::io(&session_dir, e))? {
            let path = entry.map_err(|e| AnnotationError::io(&session_dir, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let s: Session = read_json(&path)?;
                sessions.insert(s.token.clone(), s);
            }
        }
        Ok(Store {
            root,
            sessions: RwLock::new(sessions),
            writes: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn task_set_path(&self, id: &str) -> PathBuf {
        self.root.join("task_sets").join(format!("{}.json", path_component(id)))
    }

    fn annotation_path(&self, set: &str, annotator: &str, sample: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join(path_component(set))
            .join(path_component(annotator))
            .join(format!("{}.json", path_component(sample)))
    }

    /// Stores a new task set. Existing sets are never replaced, so annotations
    /// always refer to the tasks they were made against.
    pub fn import_task_set(&self, set: &TaskSet) -> Result<(), AnnotationError> {
        if set.id.trim().is_empty() {
            return Err(AnnotationError::InvalidId("task set id is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &set.tasks {
            if !seen.insert(&t.task_id) {
                return Err(AnnotationError::InvalidId(format!("duplicate task id {:?}", t.task_id)));
            }
        }
        let _guard = self.writes.lock().expect("write lock");
        let path = self.task_set_path(&set.id);
        if path.exists() {
            return Err(AnnotationError::TaskSetExists(set.id.clone()));
        }
        write_atomic(&path, &pretty(set))
    }

    pub fn task_set(&self, id: &str) -> Result<TaskSet, AnnotationError> {
        let path = self.task_set_path(id);
        if !path.exists() {
            return Err(AnnotationError::UnknownTaskSet(id.to_string()));
        }
        read_json(&path)
    }

    pub fn task_sets(&self) -> Result<Vec<TaskSet>, AnnotationError> {
        let dir = self.root.join("task_sets");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| AnnotationError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_json(p)).collect()
    }

    pub fn create_session(&self, annotator_id: &str, task_set_id: &str) -> Result<Session, AnnotationError> {
        if annotator_id.trim().is_empty() {
            return Err(AnnotationError::InvalidId("annotator id is empty".into()));
        }
        self.task_set(task_set_id)?;
        let session = Session {
            token: uuid::Uuid::new_v4().simple().to_string(),
            annotator_id: annotator_id.to_string(),
            task_set_id: task_set_id.to_string(),
            created_at: Utc::now(),
        };
        let path = self.root.join("sessions").join(format!("{}.json", session.token));
        write_atomic(&path, &pretty(&session))?;
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn session(&self, token: &str) -> Result<Session, AnnotationError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(token)
            .cloned()
            .ok_or(AnnotationError::UnknownSession)
    }

    fn stored(&self, set: &str, annotator: &str, sample: &str) -> Result<Option<StoredAnnotation>, AnnotationError> {
        let path = self.annotation_path(set, annotator, sample);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Stored annotation of this session's annotator for a task, if any.
    pub fn annotation(&self, token: &str, task_id: &str) -> Result<Option<StoredAnnotation>, AnnotationError> {
        let s = self.session(token)?;
        self.stored(&s.task_set_id, &s.annotator_id, task_id)
    }

    /// Lowest-index task this annotator has not submitted yet.
    pub fn next_task(&self, token: &str) -> Result<NextTask, AnnotationError> {
        let s = self.session(token)?;
        let set = self.task_set(&s.task_set_id)?;
        let total = set.tasks.len();
        for (index, spec) in set.tasks.into_iter().enumerate() {
            if self.stored(&s.task_set_id, &s.annotator_id, &spec.task_id)?.is_none() {
                return Ok(NextTask::Task(Box::new(AnnotationTask {
                    task_set_id: s.task_set_id.clone(),
                    index,
                    total,
                    version: 0,
                    image_url: format!("/images/{}", spec.sample.image.content_hash),
                    spec,
                })));
            }
        }
        Ok(NextTask::Done)
    }

    /// Validates and persists a submission. `base_version` must equal the
    /// stored version (0 before the first submission). Returns the new version.
    pub fn submit(
        &self,
        token: &str,
        task_id: &str,
        mut record: AnnotationRecord,
        base_version: u64,
    ) -> Result<u64, AnnotationError> {
        let s = self.session(token)?;
        let set = self.task_set(&s.task_set_id)?;
        let spec = set
            .tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| AnnotationError::UnknownTask(task_id.to_string()))?;

        // the session decides who and what; counts are always derived
        let mut errors = Vec::new();
        if record.annotator_id != s.annotator_id {
            errors.push(faithscore::meta_eval::FieldError {
                field: "annotator_id".into(),
                message: format!("session belongs to {:?}", s.annotator_id),
            });
        }
        if record.sample_id != spec.sample.id {
            errors.push(faithscore::meta_eval::FieldError {
                field: "sample_id".into(),
                message: format!("task is for sample {:?}", spec.sample.id),
            });
        }
        record.derive_counts();
        if let Err(more) = record.validate(Some(spec.subsentences.len())) {
            errors.extend(more);
        }
        if !errors.is_empty() {
            return Err(AnnotationError::Validation(errors));
        }

        let _guard = self.writes.lock().expect("write lock");
        let current = self
            .stored(&s.task_set_id, &s.annotator_id, task_id)?
            .map_or(0, |a| a.version);
        if current != base_version {
            return Err(AnnotationError::Conflict { current });
        }
        let stored = StoredAnnotation {
            version: current + 1,
            submitted_at: Utc::now(),
            record,
        };
        write_atomic(&self.annotation_path(&s.task_set_id, &s.annotator_id, task_id), &pretty(&stored))?;
        Ok(stored.version)
    }

    /// Every submitted record of a task set, ordered by annotator then task order.
    pub fn export_records(&self, task_set_id: &str) -> Result<Vec<ExportedRecord>, AnnotationError> {
        let set = self.task_set(task_set_id)?;
        let dir = self.root.join("annotations").join(path_component(task_set_id));
        let mut annotators: Vec<String> = match std::fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(AnnotationError::io(&dir, e)),
        };
        annotators.sort();

        let mut out = Vec::new();
        for annotator_dir in annotators {
            for spec in &set.tasks {
                let path = dir
                    .join(&annotator_dir)
                    .join(format!("{}.json", path_component(&spec.task_id)));
                if !path.exists() {
                    continue;
                }
                let stored: StoredAnnotation = read_json(&path)?;
                out.push(ExportedRecord {
                    file: format!(
                        "{}__{}.json",
                        path_component(&stored.record.annotator_id),
                        path_component(&stored.record.sample_id)
                    ),
                    record: stored.record,
                });
            }
        }
        if out.is_empty() {
            return Err(AnnotationError::NothingToExport(task_set_id.to_string()));
        }
        Ok(out)
    }

    /// Writes one file per record into `out_dir`. Repeated exports produce
    /// identical bytes.
    pub fn export_to_dir(&self, task_set_id: &str, out_dir: &Path) -> Result<Vec<PathBuf>, AnnotationError> {
        let records = self.export_records(task_set_id)?;
        std::fs::create_dir_all(out_dir).map_err(|e| AnnotationError::io(out_dir, e))?;
        let mut written = Vec::with_capacity(records.len());
        for r in records {
            let path = out_dir.join(&r.file);
            write_atomic(&path, &pretty(&r.record))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Bytes of the image with this content hash, checked against the hash.
    pub fn image(&self, content_hash: &str) -> Result<Vec<u8>, AnnotationError> {
        for set in self.task_sets()? {
            if let Some(t) = set
                .tasks
                .iter()
                .find(|t| t.sample.image.content_hash.eq_ignore_ascii_case(content_hash))
            {
                return Ok(t.sample.image.resolve(set.image_root.as_deref())?);
            }
        }
        Err(AnnotationError::UnknownImage(content_hash.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_components_are_safe() {
        assert_eq!(path_component("ann-1_b"), "ann-1_b");
        assert_eq!(path_component("../x"), "%2E.%2Fx");
        assert_eq!(path_component("a b/c"), "a%20b%2Fc");
    }
}
