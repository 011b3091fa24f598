use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub status: SampleStatus,
    /// Runs that attempted this sample.
    pub runs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Backend attempts spent on the failing request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl LedgerEntry {
    fn pending() -> LedgerEntry {
        LedgerEntry {
            status: SampleStatus::Pending,
            runs: 0,
            stage: None,
            error: None,
            backend_attempts: None,
            elapsed_ms: None,
        }
    }
}

/// Per-sample progress of a run, stored as `ledger.json` next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub config_hash: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub samples: BTreeMap<String, LedgerEntry>,
}

impl RunLedger {
    pub fn new(config_hash: impl Into<String>) -> RunLedger {
        let now = Utc::now();
        RunLedger {
            run_id: uuid::Uuid::new_v4().to_string(),
            config_hash: config_hash.into(),
            created_at: now,
            updated_at: now,
            samples: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<RunLedger, HarnessError> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::Load {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Replaces the file atomically.
    pub fn save(&mut self, path: &Path) -> Result<(), HarnessError> {
        self.updated_at = Utc::now();
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
        let body = serde_json::to_vec_pretty(self).expect("ledger serializes");
        tmp.write_all(&body).map_err(|e| HarnessError::io(path, e))?;
        tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
        Ok(())
    }

    pub fn register(&mut self, sample_id: &str) {
        self.samples
            .entry(sample_id.to_string())
            .or_insert_with(LedgerEntry::pending);
    }

    pub fn status(&self, sample_id: &str) -> Option<SampleStatus> {
        self.samples.get(sample_id).map(|e| e.status)
    }

    pub fn mark_done(&mut self, sample_id: &str, elapsed_ms: Option<u64>) {
        let e = self
            .samples
            .entry(sample_id.to_string())
            .or_insert_with(LedgerEntry::pending);
        e.status = SampleStatus::Done;
        e.stage = None;
        e.error = None;
        e.backend_attempts = None;
        if elapsed_ms.is_some() {
            e.runs += 1;
            e.elapsed_ms = elapsed_ms;
        }
    }

    pub fn mark_failed(
        &mut self,
        sample_id: &str,
        stage: &str,
        error: String,
        backend_attempts: Option<u32>,
        elapsed_ms: u64,
    ) {
        let e = self
            .samples
            .entry(sample_id.to_string())
            .or_insert_with(LedgerEntry::pending);
        e.status = SampleStatus::Failed;
        e.runs += 1;
        e.stage = Some(stage.to_string());
        e.error = Some(error);
        e.backend_attempts = backend_attempts;
        e.elapsed_ms = Some(elapsed_ms);
    }

    pub fn count(&self, status: SampleStatus) -> usize {
        self.samples.values().filter(|e| e.status == status).count()
    }
}
