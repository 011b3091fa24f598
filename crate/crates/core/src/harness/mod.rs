//! Dataset loading, resumable end-to-end runs and the analysis reports.

mod dataset;
mod export;
mod ledger;
mod plot;
mod report;
mod results;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backends::{canonical_json, Backend};
use crate::decomposer::{decompose, lint_atomicity, DecomposerTemplate};
use crate::error::{HarnessError, StageError};
use crate::recognizer::{identify_descriptive, RecognizerTemplate};
use crate::score::score_sample;
use crate::types::{sha256_hex, Sample, SubSentence};
use crate::verifier::verify_sample;

pub use dataset::{load_samples, DatasetFormat, CAPTION_PROMPT};
pub use export::{export_results, summary_grid, ExportFormat, SummaryMetric};
pub use ledger::{LedgerEntry, RunLedger, SampleStatus};
pub use report::{
    build_report, render_tables, write_report, CategoryBar, CurvePoint, Exclusion, ModelCurve, ReportBundle,
    ReportOptions, OBJECT_BIN_CAP,
};
pub use results::{read_all, read_results, write_jsonl, SampleRecord};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const LEDGER_FILE: &str = "ledger.json";

/// The three steps plus scoring, wired to concrete backends and templates.
pub struct Pipeline {
    pub llm: Backend,
    pub vem: Backend,
    pub recognizer: RecognizerTemplate,
    pub decomposer: DecomposerTemplate,
    /// Concurrent entailment calls per sample.
    pub fact_workers: usize,
}

/// Why a sample could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub stage: String,
    pub error: String,
    pub backend_attempts: Option<u32>,
}

impl SampleFailure {
    fn from_stage(stage: &str, e: StageError) -> SampleFailure {
        let backend_attempts = match &e {
            StageError::Backend(b) => b.attempts(),
            _ => None,
        };
        SampleFailure {
            stage: stage.to_string(),
            error: e.to_string(),
            backend_attempts,
        }
    }
}

impl Pipeline {
    pub fn new(
        llm: Backend,
        vem: Backend,
        recognizer: RecognizerTemplate,
        decomposer: DecomposerTemplate,
    ) -> Pipeline {
        Pipeline {
            llm,
            vem,
            recognizer,
            decomposer,
            fact_workers: 1,
        }
    }

    /// Hash over everything that determines the results: backend identities,
    /// template contents and splitter options.
    pub fn config_hash(&self) -> String {
        let doc = json!({
            "llm": self.llm.config().identity(),
            "vem": self.vem.config().identity(),
            "recognizer": self.recognizer.template().to_file_string(),
            "split_on_commas": self.recognizer.split_options().split_on_commas,
            "decomposer": self.decomposer.template().to_file_string(),
        });
        sha256_hex(canonical_json(&doc).as_bytes())
    }

    /// Recognize, decompose, verify and score one sample.
    pub fn evaluate(&self, sample: &Sample) -> Result<SampleRecord, SampleFailure> {
        let subsentences = identify_descriptive(&sample.answer, &self.recognizer, &self.llm)
            .map_err(|e| SampleFailure::from_stage("recognize", e))?;
        let descriptive: Vec<SubSentence> = subsentences
            .iter()
            .filter(|s| s.is_descriptive())
            .cloned()
            .collect();
        let facts = decompose(&descriptive, &self.decomposer, &self.llm)
            .map_err(|e| SampleFailure::from_stage("decompose", e))?;
        let diagnostics = lint_atomicity(&facts);
        let verdicts = verify_sample(&facts, &sample.image, &self.vem, self.fact_workers)
            .map_err(|e| SampleFailure::from_stage("verify", e.into()))?;
        let score = score_sample(&subsentences, &facts, &verdicts).map_err(|e| SampleFailure {
            stage: "score".into(),
            error: e.to_string(),
            backend_attempts: None,
        })?;
        Ok(SampleRecord {
            sample: sample.clone(),
            subsentences,
            facts,
            verdicts,
            score,
            diagnostics,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Samples evaluated concurrently.
    pub workers: usize,
    /// Continue the run recorded in the output directory.
    pub resume: bool,
    /// Stop after this many pending samples have been processed.
    pub max_samples: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            resume: false,
            max_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub results_path: PathBuf,
    pub ledger_path: PathBuf,
    /// Samples already done before this invocation.
    pub skipped: usize,
    pub done: usize,
    pub failed: usize,
    /// Samples left pending (e.g. because of `max_samples`).
    pub remaining: usize,
}

/// Runs the pipeline over `samples`, appending one line per scored sample to
/// `results.jsonl` in `out_dir` and tracking progress in `ledger.json`.
///
/// Records are written in dataset order regardless of completion order, so
/// scripted runs are byte-for-byte reproducible. Failed samples are recorded
/// in the ledger and retried by the next resume; done samples never are.
pub fn run_evaluation(
    samples: &[Sample],
    pipeline: &Pipeline,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let ledger_path = out_dir.join(LEDGER_FILE);
    let results_path = out_dir.join(RESULTS_FILE);
    let hash = pipeline.config_hash();

    let mut ledger = if ledger_path.exists() {
        if !opts.resume {
            return Err(HarnessError::RunExists(out_dir.to_path_buf()));
        }
        let l = RunLedger::load(&ledger_path)?;
        if l.config_hash != hash {
            return Err(HarnessError::ConfigMismatch {
                ledger: l.config_hash,
                current: hash,
            });
        }
        l
    } else if results_path.exists() && !opts.resume {
        return Err(HarnessError::RunExists(out_dir.to_path_buf()));
    } else {
        RunLedger::new(hash)
    };

    // the results file is the source of truth for what is done
    let done_ids: HashSet<String> = if results_path.exists() {
        read_results(&results_path)?
            .into_iter()
            .map(|r| r.sample.id)
            .collect()
    } else {
        HashSet::new()
    };

    let mut skipped = 0;
    let mut pending: Vec<&Sample> = Vec::new();
    for s in samples {
        ledger.register(&s.id);
        if done_ids.contains(&s.id) {
            ledger.mark_done(&s.id, None);
            skipped += 1;
        } else {
            pending.push(s);
        }
    }
    let total_pending = pending.len();
    if let Some(limit) = opts.max_samples {
        pending.truncate(limit);
    }
    ledger.save(&ledger_path)?;

    let mut results = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)
        .map_err(|e| HarnessError::io(&results_path, e))?;

    let next = AtomicUsize::new(0);
    let workers = opts.workers.clamp(1, pending.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, Result<SampleRecord, SampleFailure>, u64)>();
    let mut done = 0;
    let mut failed = 0;

    let write_result: Result<(), HarnessError> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let pending = &pending;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = pending.get(i) else { break };
                let started = Instant::now();
                let outcome = pipeline.evaluate(sample);
                let elapsed = started.elapsed().as_millis() as u64;
                if tx.send((i, outcome, elapsed)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer; emits in pending order
        let mut buffered = BTreeMap::new();
        let mut cursor = 0;
        for (i, outcome, elapsed) in rx {
            buffered.insert(i, (outcome, elapsed));
            while let Some((outcome, elapsed)) = buffered.remove(&cursor) {
                let id = &pending[cursor].id;
                match outcome {
                    Ok(record) => {
                        results
                            .write_all(record.to_json_line().as_bytes())
                            .and_then(|_| results.flush())
                            .map_err(|e| HarnessError::io(&results_path, e))?;
                        ledger.mark_done(id, Some(elapsed));
                        done += 1;
                    }
                    Err(f) => {
                        log::warn!("sample {id} failed at {}: {}", f.stage, f.error);
                        ledger.mark_failed(id, &f.stage, f.error, f.backend_attempts, elapsed);
                        failed += 1;
                    }
                }
                ledger.save(&ledger_path)?;
                cursor += 1;
            }
        }
        Ok(())
    });
    write_result?;

    Ok(RunSummary {
        run_id: ledger.run_id.clone(),
        results_path,
        ledger_path,
        skipped,
        done,
        failed,
        remaining: total_pending - done - failed,
    })
}
