use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::score::{aggregate_corpus, CorpusTable, ScoredSample, TaskGroup};
use crate::types::{FactCategory, SampleScore, TaskCategory};

use super::plot;
use super::results::SampleRecord;

/// Entity counts at or above this share one pooled bin.
pub const OBJECT_BIN_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Width of answer-length bins, in whitespace tokens.
    pub length_bin_width: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { length_bin_width: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub label: String,
    /// Inclusive bounds; `upper` is `None` for an open-ended bin.
    pub lower: usize,
    pub upper: Option<usize>,
    pub mean_faithscore: f64,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCurve {
    pub model_name: String,
    pub points: Vec<CurvePoint>,
}

/// Pooled fraction of supported facts of one category for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBar {
    pub model_name: String,
    pub category: FactCategory,
    pub supported: usize,
    pub total: usize,
    pub fraction: f64,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub model_name: String,
    /// Samples without any atomic fact.
    pub no_facts: Vec<String>,
    /// Samples without any descriptive sub-sentence.
    pub no_descriptive: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub options: ReportOptions,
    pub n_records: usize,
    pub corpus: CorpusTable,
    pub length_curve: Vec<ModelCurve>,
    pub object_curve: Vec<ModelCurve>,
    pub category_bars: Vec<CategoryBar>,
    pub exclusions: Vec<Exclusion>,
}

struct Row<'a> {
    record: &'a SampleRecord,
    score: SampleScore,
}

fn answer_length(answer: &str) -> usize {
    answer.split_whitespace().count()
}

fn entity_count(record: &SampleRecord) -> usize {
    record
        .facts
        .iter()
        .filter(|f| f.category == FactCategory::Entity)
        .count()
}

/// Groups present fact-level scores per model by a bin key and averages them.
fn curve<K: Ord + Copy>(
    rows: &[Row<'_>],
    key: impl Fn(&Row<'_>) -> Option<K>,
    describe: impl Fn(K) -> (String, usize, Option<usize>),
) -> Vec<ModelCurve> {
    let mut bins: BTreeMap<&str, BTreeMap<K, Vec<(&str, f64)>>> = BTreeMap::new();
    for r in rows {
        let (Some(k), Some(v)) = (key(r), r.score.faithscore.value()) else {
            continue;
        };
        bins.entry(r.record.sample.model_name.as_str())
            .or_default()
            .entry(k)
            .or_default()
            .push((r.record.sample.id.as_str(), v));
    }
    bins.into_iter()
        .map(|(model, by_bin)| ModelCurve {
            model_name: model.to_string(),
            points: by_bin
                .into_iter()
                .map(|(k, mut members)| {
                    members.sort_by(|a, b| a.0.cmp(b.0));
                    let sum: f64 = members.iter().map(|(_, v)| v).sum();
                    let (label, lower, upper) = describe(k);
                    CurvePoint {
                        label,
                        lower,
                        upper,
                        mean_faithscore: sum / members.len() as f64,
                        sample_ids: members.into_iter().map(|(id, _)| id.to_string()).collect(),
                    }
                })
                .collect(),
        })
        .collect()
}

/// Builds every table and curve from the raw records. Scores are recomputed
/// from sub-sentences, facts and verdicts, never read from the stored score.
pub fn build_report(records: &[SampleRecord], opts: &ReportOptions) -> Result<ReportBundle, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    if opts.length_bin_width == 0 {
        return Err(HarnessError::Config("length bin width must be positive".into()));
    }
    let rows: Vec<Row<'_>> = records
        .iter()
        .map(|r| Ok(Row { record: r, score: r.rescore()? }))
        .collect::<Result<_, HarnessError>>()?;

    let scored: Vec<ScoredSample<'_>> = rows
        .iter()
        .map(|r| ScoredSample {
            sample_id: &r.record.sample.id,
            model_name: &r.record.sample.model_name,
            task: r.record.sample.task_category,
            score: &r.score,
        })
        .collect();
    let corpus = aggregate_corpus(&scored);

    let width = opts.length_bin_width;
    let length_curve = curve(
        &rows,
        |r| Some(answer_length(&r.record.sample.answer) / width),
        |k| {
            let (lo, hi) = (k * width, (k + 1) * width - 1);
            (format!("{lo}-{hi}"), lo, Some(hi))
        },
    );
    let object_curve = curve(
        &rows,
        |r| match entity_count(r.record) {
            0 => None,
            n => Some(n.min(OBJECT_BIN_CAP)),
        },
        |k| {
            if k == OBJECT_BIN_CAP {
                (format!("{k}+"), k, None)
            } else {
                (k.to_string(), k, Some(k))
            }
        },
    );

    let mut bars: BTreeMap<(&str, FactCategory), (usize, usize, Vec<&str>)> = BTreeMap::new();
    let mut exclusions: BTreeMap<&str, Exclusion> = BTreeMap::new();
    for r in &rows {
        let model = r.record.sample.model_name.as_str();
        for (cat, count) in &r.score.per_category {
            let e = bars.entry((model, *cat)).or_default();
            e.0 += count.supported;
            e.1 += count.total;
            e.2.push(&r.record.sample.id);
        }
        let ex = exclusions.entry(model).or_insert_with(|| Exclusion {
            model_name: model.to_string(),
            no_facts: Vec::new(),
            no_descriptive: Vec::new(),
        });
        if !r.score.faithscore.is_present() {
            ex.no_facts.push(r.record.sample.id.clone());
        }
        if !r.score.sentence_score.is_present() {
            ex.no_descriptive.push(r.record.sample.id.clone());
        }
    }
    let category_bars = bars
        .into_iter()
        .map(|((model, category), (supported, total, mut ids))| {
            ids.sort();
            CategoryBar {
                model_name: model.to_string(),
                category,
                supported,
                total,
                fraction: supported as f64 / total as f64,
                sample_ids: ids.into_iter().map(str::to_string).collect(),
            }
        })
        .collect();
    let exclusions = exclusions
        .into_values()
        .map(|mut e| {
            e.no_facts.sort();
            e.no_descriptive.sort();
            e
        })
        .collect();

    Ok(ReportBundle {
        options: opts.clone(),
        n_records: records.len(),
        corpus,
        length_curve,
        object_curve,
        category_bars,
        exclusions,
    })
}

/// Task columns in table order: instruction tasks, then `Overall`, then captioning.
pub(crate) fn table_columns(corpus: &CorpusTable) -> Vec<TaskGroup> {
    let present = |g: TaskGroup| corpus.groups.iter().any(|m| m.group == g);
    let mut cols: Vec<TaskGroup> = TaskCategory::ALL
        .into_iter()
        .filter(|t| *t != TaskCategory::Caption)
        .map(TaskGroup::Task)
        .filter(|g| present(*g))
        .collect();
    if present(TaskGroup::Overall) {
        cols.push(TaskGroup::Overall);
    }
    if present(TaskGroup::Task(TaskCategory::Caption)) {
        cols.push(TaskGroup::Task(TaskCategory::Caption));
    }
    cols
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn grid_text(out: &mut String, title: &str, corpus: &CorpusTable, sentence: bool) {
    let cols = table_columns(corpus);
    let models = corpus.models();
    let model_w = models.iter().map(|m| m.len()).max().unwrap_or(0).max(5);
    let widths: Vec<usize> = cols.iter().map(|c| c.label().len().max(6)).collect();

    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<model_w$}", "Model");
    for (c, w) in cols.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", c.label());
    }
    out.push('\n');
    for m in models {
        let _ = write!(out, "{m:<model_w$}");
        for (c, w) in cols.iter().zip(&widths) {
            let cell = corpus.get(m, *c).and_then(|g| {
                let cell = if sentence { &g.sentence_score } else { &g.faithscore };
                cell.as_ref().map(|c| c.mean)
            });
            let _ = write!(out, "  {:>w$}", fmt_cell(cell));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn curve_text(out: &mut String, title: &str, curves: &[ModelCurve]) {
    let _ = writeln!(out, "{title}");
    for c in curves {
        let _ = writeln!(out, "  {}", c.model_name);
        for p in &c.points {
            let _ = writeln!(
                out,
                "    {:>8}  {:.4}  (n={})",
                p.label,
                p.mean_faithscore,
                p.sample_ids.len()
            );
        }
    }
    out.push('\n');
}

/// Plain-text rendering of the whole bundle.
pub fn render_tables(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    grid_text(&mut out, "FaithScore", &bundle.corpus, false);
    grid_text(&mut out, "Sentence-level FaithScore", &bundle.corpus, true);
    curve_text(
        &mut out,
        &format!("FaithScore by answer length (bin width {})", bundle.options.length_bin_width),
        &bundle.length_curve,
    );
    curve_text(&mut out, "FaithScore by entity count", &bundle.object_curve);

    let _ = writeln!(out, "FaithScore by fact type");
    for b in &bundle.category_bars {
        let _ = writeln!(
            out,
            "  {:<20} {:<9} {:.4}  ({}/{})",
            b.model_name,
            b.category.header(),
            b.fraction,
            b.supported,
            b.total
        );
    }
    out.push('\n');

    let _ = writeln!(out, "Exclusions");
    for e in &bundle.exclusions {
        let _ = writeln!(
            out,
            "  {:<20} no facts: {}  no descriptive sub-sentences: {}",
            e.model_name,
            e.no_facts.len(),
            e.no_descriptive.len()
        );
    }
    for w in &bundle.corpus.warnings {
        let _ = writeln!(out, "  warning: {} / {}: {}", w.model_name, w.group.label(), w.message);
    }
    out
}

/// Writes `report.json`, `tables.txt` and the SVG plots into `out_dir`.
pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(bundle).expect("report serializes");
    let files = [
        ("report.json", json),
        ("tables.txt", render_tables(bundle)),
        (
            "length_curve.svg",
            plot::line_chart("FaithScore by answer length", "answer length (tokens)", &bundle.length_curve),
        ),
        (
            "object_curve.svg",
            plot::line_chart("FaithScore by entity count", "entity facts", &bundle.object_curve),
        ),
        ("fact_types.svg", plot::bar_chart("FaithScore by fact type", &bundle.category_bars)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
