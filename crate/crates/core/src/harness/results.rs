use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposer::LintFinding;
use crate::error::{HarnessError, ScoreError};
use crate::score::score_sample;
use crate::types::{AtomicFact, Sample, SampleScore, SubSentence, Verdict};

/// Everything persisted for one evaluated sample; one JSON line per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: Sample,
    pub subsentences: Vec<SubSentence>,
    pub facts: Vec<AtomicFact>,
    pub verdicts: Vec<Verdict>,
    pub score: SampleScore,
    /// Atomicity lint findings; advisory only.
    #[serde(default)]
    pub diagnostics: Vec<LintFinding>,
}

impl SampleRecord {
    /// Recomputes the score from the stored sub-sentences, facts and verdicts.
    pub fn rescore(&self) -> Result<SampleScore, ScoreError> {
        score_sample(&self.subsentences, &self.facts, &self.verdicts)
    }

    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("records serialize");
        line.push('\n');
        line
    }
}

pub fn read_results(path: &Path) -> Result<Vec<SampleRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_results(&text, path)
}

pub(crate) fn parse_results(text: &str, path: &Path) -> Result<Vec<SampleRecord>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Load {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Reads every results file and concatenates the records.
pub fn read_all(paths: &[impl AsRef<Path>]) -> Result<Vec<SampleRecord>, HarnessError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_results(p.as_ref())?);
    }
    Ok(out)
}

pub fn write_jsonl(records: &[SampleRecord], path: &Path) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    for r in records {
        file.write_all(r.to_json_line().as_bytes())
            .map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(())
}
