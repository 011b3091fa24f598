//! Validation of the metric against human annotations: agreement between
//! annotators, accuracy of the recognizer and verifier against majority gold,
//! and correlation of engine scores with Likert judgments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decomposer::normalize;
use crate::error::{HarnessError, StatsError};
use crate::harness::SampleRecord;
use crate::score::likert_from_counts;
use crate::stats::{component_accuracy, correlate, fleiss_kappa, majority_vote, CorrelationMethod, RatingsMatrix, Vote};
use crate::types::{FactCategory, ScoreValue, SubSentenceLabel};

pub const LIKERT_COMBINER: &str = "median of per-annotator Likert scores";
pub const KENDALL_VARIANT: &str = "tau-b";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedFact {
    pub statement: String,
    pub category: FactCategory,
    /// Index of the sub-sentence the fact belongs to.
    pub source_subsentence: usize,
    /// `None` until the annotator has judged the fact.
    #[serde(default)]
    pub hallucinated: Option<bool>,
}

/// One annotator's judgment of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub sample_id: String,
    pub subsentence_labels: Vec<SubSentenceLabel>,
    pub facts: Vec<AnnotatedFact>,
    /// Judged facts under descriptive sub-sentences.
    pub n: usize,
    /// Of those, the hallucinated ones.
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> FieldError {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl AnnotationRecord {
    /// `(n, x)` as implied by the facts and labels.
    pub fn counts(&self) -> (usize, usize) {
        let judged = self.facts.iter().filter(|f| {
            self.subsentence_labels.get(f.source_subsentence) == Some(&SubSentenceLabel::Descriptive)
        });
        let (mut n, mut x) = (0, 0);
        for f in judged {
            n += 1;
            if f.hallucinated == Some(true) {
                x += 1;
            }
        }
        (n, x)
    }

    pub fn derive_counts(&mut self) {
        (self.n, self.x) = self.counts();
    }

    /// Likert score of this record; `None` when no fact was judged.
    pub fn likert(&self) -> Option<u8> {
        likert_from_counts(self.n, self.x).ok()
    }

    /// Checks the record for completeness. `expected_subsentences` is the
    /// sub-sentence count of the sample, when known.
    pub fn validate(&self, expected_subsentences: Option<usize>) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        if self.annotator_id.trim().is_empty() {
            errs.push(FieldError::new("annotator_id", "must not be empty"));
        }
        if self.sample_id.trim().is_empty() {
            errs.push(FieldError::new("sample_id", "must not be empty"));
        }
        if let Some(expected) = expected_subsentences {
            if self.subsentence_labels.len() != expected {
                errs.push(FieldError::new(
                    "subsentence_labels",
                    format!("expected {expected} labels, got {}", self.subsentence_labels.len()),
                ));
            }
        }
        for (i, f) in self.facts.iter().enumerate() {
            if f.statement.trim().is_empty() {
                errs.push(FieldError::new(format!("facts[{i}].statement"), "must not be empty"));
            }
            match self.subsentence_labels.get(f.source_subsentence) {
                None => errs.push(FieldError::new(
                    format!("facts[{i}].source_subsentence"),
                    format!("no sub-sentence {}", f.source_subsentence),
                )),
                Some(SubSentenceLabel::Analytical) => errs.push(FieldError::new(
                    format!("facts[{i}]"),
                    format!("sub-sentence {} is analytical and takes no facts", f.source_subsentence),
                )),
                Some(SubSentenceLabel::Descriptive) if f.hallucinated.is_none() => errs.push(
                    FieldError::new(format!("facts[{i}].hallucinated"), "verdict missing"),
                ),
                Some(SubSentenceLabel::Descriptive) => {}
            }
        }
        let (n, x) = self.counts();
        if self.x > self.n {
            errs.push(FieldError::new("x", format!("{} exceeds n = {}", self.x, self.n)));
        }
        if (self.n, self.x) != (n, x) {
            errs.push(FieldError::new(
                "n",
                format!("counts ({}, {}) disagree with the facts ({n}, {x})", self.n, self.x),
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

fn describe(errs: &[FieldError]) -> String {
    errs.iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Reads every `*.json` file in `dir` (sorted by name) as one record.
pub fn load_annotations(dir: &Path) -> Result<Vec<AnnotationRecord>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| HarnessError::io(&p, e))?;
        let rec: AnnotationRecord = serde_json::from_slice(&bytes).map_err(|e| HarnessError::Load {
            path: p.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        rec.validate(None).map_err(|errs| HarnessError::Load {
            path: p.clone(),
            line: 0,
            reason: describe(&errs),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// A statistic that may be undefined on the given data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<Result<f64, StatsError>> for Outcome {
    fn from(r: Result<f64, StatsError>) -> Self {
        match r {
            Ok(v) => Outcome { value: Some(v), error: None },
            Err(e) => Outcome { value: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub sample_id: String,
    pub engine: f64,
    pub human: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub combiner: String,
    pub kendall_variant: String,
    pub pairs: Vec<AlignedPair>,
    pub statistics: BTreeMap<CorrelationMethod, Outcome>,
    /// Engine samples without any annotation.
    pub orphan_engine: Vec<String>,
    /// Annotated samples without an engine score.
    pub orphan_annotations: Vec<String>,
    /// Aligned samples the engine scored as having no descriptive content.
    pub excluded_no_content: Vec<String>,
    /// Aligned samples where no annotator judged any fact.
    pub excluded_no_judgment: Vec<String>,
}

fn median(values: &mut [u8]) -> f64 {
    values.sort_unstable();
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        f64::from(values[m])
    } else {
        (f64::from(values[m - 1]) + f64::from(values[m])) / 2.0
    }
}

/// Correlates engine scores with the per-sample median human Likert score.
/// Ids present on only one side are listed and skipped.
pub fn correlate_with_human(
    engine: &BTreeMap<String, ScoreValue>,
    records: &[AnnotationRecord],
) -> Result<CorrelationReport, StatsError> {
    let mut by_sample: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_sample.entry(&r.sample_id).or_default().push(r);
    }
    let orphan_engine = engine
        .keys()
        .filter(|id| !by_sample.contains_key(id.as_str()))
        .cloned()
        .collect();
    let orphan_annotations = by_sample
        .keys()
        .filter(|id| !engine.contains_key(**id))
        .map(|id| id.to_string())
        .collect();

    let mut pairs = Vec::new();
    let mut excluded_no_content = Vec::new();
    let mut excluded_no_judgment = Vec::new();
    for (id, recs) in &by_sample {
        let Some(score) = engine.get(*id) else { continue };
        let Some(engine_value) = score.value() else {
            excluded_no_content.push(id.to_string());
            continue;
        };
        let mut likerts: Vec<u8> = recs.iter().filter_map(|r| r.likert()).collect();
        if likerts.is_empty() {
            excluded_no_judgment.push(id.to_string());
            continue;
        }
        pairs.push(AlignedPair {
            sample_id: id.to_string(),
            engine: engine_value,
            human: median(&mut likerts),
        });
    }
    if pairs.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: pairs.len(),
        });
    }

    let x: Vec<f64> = pairs.iter().map(|p| p.engine).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.human).collect();
    let statistics = CorrelationMethod::ALL
        .into_iter()
        .map(|m| (m, Outcome::from(correlate(&x, &y, m))))
        .collect();
    Ok(CorrelationReport {
        combiner: LIKERT_COMBINER.into(),
        kendall_variant: KENDALL_VARIANT.into(),
        pairs,
        statistics,
        orphan_engine,
        orphan_annotations,
        excluded_no_content,
        excluded_no_judgment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementOutcome {
    #[serde(flatten)]
    pub kappa: Outcome,
    pub items: usize,
    pub raters: usize,
    /// Items left out because they had a different number of raters.
    pub skipped_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyOutcome {
    #[serde(flatten)]
    pub accuracy: Outcome,
    pub items: usize,
    /// Items whose majority vote tied.
    pub ties: usize,
    /// Items that could not be aligned with the engine output.
    pub unaligned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEvalReport {
    pub n_records: usize,
    pub n_annotations: usize,
    pub subsentence_agreement: AgreementOutcome,
    pub likert_agreement: AgreementOutcome,
    pub recognizer_accuracy: AccuracyOutcome,
    pub verifier_accuracy: AccuracyOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_error: Option<String>,
}

/// Fleiss' κ over the items carrying the most common number of ratings.
fn agreement<T: Ord + Clone>(items: Vec<Vec<T>>) -> AgreementOutcome {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for i in &items {
        *freq.entry(i.len()).or_default() += 1;
    }
    // most items win; on a tie prefer more raters
    let raters = freq
        .iter()
        .max_by_key(|(len, count)| (**count, **len))
        .map(|(len, _)| *len)
        .unwrap_or(0);
    let total = items.len();
    let kept: Vec<Vec<T>> = items.into_iter().filter(|i| i.len() == raters).collect();
    let kappa = RatingsMatrix::from_labels(&kept).and_then(|m| fleiss_kappa(&m));
    AgreementOutcome {
        kappa: kappa.into(),
        items: kept.len(),
        raters,
        skipped_items: total - kept.len(),
    }
}

fn accuracy<T: PartialEq>(predicted: &[T], gold: &[T], ties: usize, unaligned: usize) -> AccuracyOutcome {
    AccuracyOutcome {
        accuracy: component_accuracy(predicted, gold).into(),
        items: gold.len(),
        ties,
        unaligned,
    }
}

/// Full comparison of engine records against human annotations.
pub fn meta_evaluate(records: &[SampleRecord], annotations: &[AnnotationRecord]) -> Result<MetaEvalReport, HarnessError> {
    let mut by_sample: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        by_sample.entry(&a.sample_id).or_default().push(a);
    }
    let engine: BTreeMap<&str, &SampleRecord> = records.iter().map(|r| (r.sample.id.as_str(), r)).collect();

    // sub-sentence labels: one item per (sample, index)
    let mut label_items: Vec<Vec<SubSentenceLabel>> = Vec::new();
    let mut label_engine: Vec<Option<SubSentenceLabel>> = Vec::new();
    let mut label_unaligned = 0;
    for (id, anns) in &by_sample {
        let width = anns.iter().map(|a| a.subsentence_labels.len()).max().unwrap_or(0);
        let machine = engine.get(id).map(|r| &r.subsentences);
        for i in 0..width {
            let labels: Vec<SubSentenceLabel> =
                anns.iter().filter_map(|a| a.subsentence_labels.get(i).copied()).collect();
            label_items.push(labels);
            let m = match machine {
                Some(subs) if subs.len() == width => subs[i].label,
                _ => None,
            };
            if m.is_none() {
                label_unaligned += 1;
            }
            label_engine.push(m);
        }
    }
    let votes = majority_vote(&label_items)?;
    let (mut pred, mut gold, mut ties) = (Vec::new(), Vec::new(), 0);
    for (vote, m) in votes.into_iter().zip(&label_engine) {
        match (vote, m) {
            (_, None) => {}
            (Vote::Tie, Some(_)) => ties += 1,
            (Vote::Winner(g), Some(p)) => {
                gold.push(g);
                pred.push(*p);
            }
        }
    }
    let recognizer_accuracy = accuracy(&pred, &gold, ties, label_unaligned);
    let subsentence_agreement = agreement(label_items);

    // verifier: engine facts matched by normalized statement to annotated facts
    let (mut pred, mut gold, mut ties, mut unaligned) = (Vec::new(), Vec::new(), 0, 0);
    for (id, anns) in &by_sample {
        let Some(rec) = engine.get(id) else { continue };
        let verdicts: BTreeMap<&str, bool> =
            rec.verdicts.iter().map(|v| (v.fact_id.as_str(), !v.supported)).collect();
        for f in &rec.facts {
            let key = normalize(&f.statement);
            let judged: Vec<bool> = anns
                .iter()
                .filter_map(|a| {
                    a.facts
                        .iter()
                        .find(|af| normalize(&af.statement) == key)
                        .and_then(|af| af.hallucinated)
                })
                .collect();
            if judged.is_empty() {
                unaligned += 1;
                continue;
            }
            match majority_vote(&[judged])?.remove(0) {
                Vote::Tie => ties += 1,
                Vote::Winner(g) => {
                    gold.push(g);
                    pred.push(verdicts[f.fact_id.as_str()]);
                }
            }
        }
    }
    let verifier_accuracy = accuracy(&pred, &gold, ties, unaligned);

    let likert_items: Vec<Vec<u8>> = by_sample
        .values()
        .map(|anns| anns.iter().filter_map(|a| a.likert()).collect::<Vec<u8>>())
        .filter(|l| !l.is_empty())
        .collect();
    let likert_agreement = agreement(likert_items);

    let scores: BTreeMap<String, ScoreValue> = records
        .iter()
        .map(|r| Ok((r.sample.id.clone(), r.rescore()?.faithscore)))
        .collect::<Result<_, HarnessError>>()?;
    let (correlation, correlation_error) = match correlate_with_human(&scores, annotations) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };

    Ok(MetaEvalReport {
        n_records: records.len(),
        n_annotations: annotations.len(),
        subsentence_agreement,
        likert_agreement,
        recognizer_accuracy,
        verifier_accuracy,
        correlation,
        correlation_error,
    })
}

fn fmt_outcome(o: &Outcome) -> String {
    match (o.value, &o.error) {
        (Some(v), _) => format!("{v:.4}"),
        (None, Some(e)) => format!("undefined ({e})"),
        (None, None) => "-".into(),
    }
}

pub fn render_meta_eval(r: &MetaEvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "records: {}  annotations: {}", r.n_records, r.n_annotations);
    out.push('\n');
    let _ = writeln!(out, "Agreement (Fleiss' kappa)");
    for (name, a) in [("sub-sentence labels", &r.subsentence_agreement), ("Likert", &r.likert_agreement)] {
        let _ = writeln!(
            out,
            "  {name:<20} {}  items={} raters={} skipped={}",
            fmt_outcome(&a.kappa),
            a.items,
            a.raters,
            a.skipped_items
        );
    }
    out.push('\n');
    let _ = writeln!(out, "Component accuracy");
    for (name, a) in [("recognizer", &r.recognizer_accuracy), ("verifier", &r.verifier_accuracy)] {
        let _ = writeln!(
            out,
            "  {name:<20} {}  items={} ties={} unaligned={}",
            fmt_outcome(&a.accuracy),
            a.items,
            a.ties,
            a.unaligned
        );
    }
    out.push('\n');
    let _ = writeln!(out, "Correlation with human judgment");
    match (&r.correlation, &r.correlation_error) {
        (Some(c), _) => {
            let _ = writeln!(out, "  human score: {}; Kendall variant: {}", c.combiner, c.kendall_variant);
            let _ = writeln!(out, "  aligned samples: {}", c.pairs.len());
            for (m, o) in &c.statistics {
                let _ = writeln!(out, "  {:<20} {}", format!("{m:?}"), fmt_outcome(o));
            }
            let _ = writeln!(
                out,
                "  orphans: {} engine, {} annotated; excluded: {} no content, {} no judged facts",
                c.orphan_engine.len(),
                c.orphan_annotations.len(),
                c.excluded_no_content.len(),
                c.excluded_no_judgment.len()
            );
        }
        (None, e) => {
            let _ = writeln!(out, "  undefined ({})", e.as_deref().unwrap_or("no data"));
        }
    }
    out
}

/// Writes `meta_eval.json` and `meta_eval.txt` into `out_dir`.
pub fn write_meta_eval(report: &MetaEvalReport, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in [
        ("meta_eval.json", serde_json::to_string_pretty(report).expect("report serializes")),
        ("meta_eval.txt", render_meta_eval(report)),
    ] {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
