use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::score::{aggregate_corpus, CorpusTable, ScoredSample};

use super::report::table_columns;
use super::results::{write_jsonl, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExportFormat {
    Jsonl,
    CsvSummary,
}

/// Which score fills the cells of the summary grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryMetric {
    #[default]
    FaithScore,
    SentenceScore,
}

/// Header and rows of the model × task grid. Missing cells are empty strings.
pub fn summary_grid(corpus: &CorpusTable, metric: SummaryMetric) -> (Vec<String>, Vec<Vec<String>>) {
    let cols = table_columns(corpus);
    let mut header = vec!["model".to_string()];
    header.extend(cols.iter().map(|c| c.label().to_string()));
    let rows = corpus
        .models()
        .into_iter()
        .map(|m| {
            let mut row = vec![m.to_string()];
            for c in &cols {
                let cell = corpus.get(m, *c).and_then(|g| match metric {
                    SummaryMetric::FaithScore => g.faithscore.as_ref(),
                    SummaryMetric::SentenceScore => g.sentence_score.as_ref(),
                });
                row.push(cell.map(|c| format!("{:.4}", c.mean)).unwrap_or_default());
            }
            row
        })
        .collect();
    (header, rows)
}

/// Writes the records as lossless JSONL, or the per-model summary grid as CSV.
pub fn export_results(
    records: &[SampleRecord],
    format: ExportFormat,
    metric: SummaryMetric,
    path: &Path,
) -> Result<(), HarnessError> {
    match format {
        ExportFormat::Jsonl => write_jsonl(records, path),
        ExportFormat::CsvSummary => {
            let scores: Vec<_> = records
                .iter()
                .map(|r| r.rescore())
                .collect::<Result<_, _>>()?;
            let scored: Vec<ScoredSample<'_>> = records
                .iter()
                .zip(&scores)
                .map(|(r, s)| ScoredSample {
                    sample_id: &r.sample.id,
                    model_name: &r.sample.model_name,
                    task: r.sample.task_category,
                    score: s,
                })
                .collect();
            let (header, rows) = summary_grid(&aggregate_corpus(&scored), metric);
            let csv_err = |e: csv::Error| {
                HarnessError::io(path, std::io::Error::other(e.to_string()))
            };
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            w.write_record(&header).map_err(csv_err)?;
            for row in rows {
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| HarnessError::io(path, e))
        }
    }
}
