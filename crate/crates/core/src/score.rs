//! Deterministic scoring: fact-level and sentence-level FaithScore, per-category
//! breakdown, the Likert mapping used for human judgments, and corpus means.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::ScoreError;
use crate::types::{
    AtomicFact, CategoryCount, FactCategory, SampleScore, ScoreValue, SubSentence, TaskCategory,
    Verdict,
};

/// A verdict counts as support only when it is positive and unambiguous.
pub fn counts_as_supported(verdict: &Verdict) -> bool {
    verdict.supported && !verdict.ambiguous
}

/// Pairs each fact with its verdict, checking the id bijection and the weights.
/// The result is ordered by fact id so that sums do not depend on input order.
fn align<'a>(
    facts: &'a [AtomicFact],
    verdicts: &'a [Verdict],
) -> Result<Vec<(&'a AtomicFact, &'a Verdict)>, ScoreError> {
    let mut by_id: HashMap<&str, &Verdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.fact_id.as_str(), v).is_some() {
            return Err(ScoreError::ContractViolation(format!(
                "duplicate verdict for fact {}",
                v.fact_id
            )));
        }
    }
    let mut seen = HashSet::with_capacity(facts.len());
    let mut pairs = Vec::with_capacity(facts.len());
    for f in facts {
        if !seen.insert(f.fact_id.as_str()) {
            return Err(ScoreError::ContractViolation(format!(
                "duplicate fact id {}",
                f.fact_id
            )));
        }
        if !(f.weight.is_finite() && f.weight >= 0.0) {
            return Err(ScoreError::InvalidWeights(format!(
                "fact {} has weight {}",
                f.fact_id, f.weight
            )));
        }
        let v = by_id.get(f.fact_id.as_str()).ok_or_else(|| {
            ScoreError::ContractViolation(format!("no verdict for fact {}", f.fact_id))
        })?;
        pairs.push((f, *v));
    }
    if verdicts.len() != facts.len() {
        let orphan = verdicts
            .iter()
            .find(|v| !seen.contains(v.fact_id.as_str()))
            .map(|v| v.fact_id.clone())
            .unwrap_or_default();
        return Err(ScoreError::ContractViolation(format!(
            "verdict {orphan} references no fact"
        )));
    }
    pairs.sort_by(|a, b| a.0.fact_id.cmp(&b.0.fact_id));
    Ok(pairs)
}

fn weighted_fraction<'a>(
    pairs: impl Iterator<Item = (&'a AtomicFact, &'a Verdict)>,
) -> Option<f64> {
    let (num, den) = pairs.fold((0.0f64, 0.0f64), |(num, den), (f, v)| {
        let s = if counts_as_supported(v) { 1.0 } else { 0.0 };
        (num + f.weight * s, den + f.weight)
    });
    (den > 0.0).then(|| num / den)
}

/// Weighted fraction of supported facts, `Σ w·s / Σ w`.
///
/// With unit weights this is exactly `supported / total`. An empty fact list
/// yields [`ScoreValue::NoDescriptiveContent`].
pub fn compute_faithscore(
    facts: &[AtomicFact],
    verdicts: &[Verdict],
) -> Result<ScoreValue, ScoreError> {
    let pairs = align(facts, verdicts)?;
    if pairs.is_empty() {
        return Ok(ScoreValue::NoDescriptiveContent);
    }
    weighted_fraction(pairs.into_iter())
        .map(ScoreValue::Value)
        .ok_or_else(|| ScoreError::InvalidWeights("all fact weights are zero".into()))
}

/// Sentence-level score `1 - C_h / C` over descriptive sub-sentences.
///
/// `fact_map` holds the verdicts of the facts attributed to each descriptive
/// sub-sentence; a sub-sentence is hallucinated when any of them is unsupported.
pub fn compute_sentence_score(
    subsentences: &[SubSentence],
    fact_map: &BTreeMap<usize, Vec<Verdict>>,
) -> Result<ScoreValue, ScoreError> {
    let descriptive: HashSet<usize> = subsentences
        .iter()
        .filter(|s| s.is_descriptive())
        .map(|s| s.index)
        .collect();
    if let Some(bad) = fact_map.keys().find(|k| !descriptive.contains(k)) {
        return Err(ScoreError::ContractViolation(format!(
            "verdicts keyed to sub-sentence {bad}, which is not descriptive"
        )));
    }
    let (total, hallucinated) = sentence_counts(&descriptive, fact_map);
    if total == 0 {
        return Ok(ScoreValue::NoDescriptiveContent);
    }
    Ok(ScoreValue::Value(1.0 - hallucinated as f64 / total as f64))
}

fn sentence_counts(
    descriptive: &HashSet<usize>,
    fact_map: &BTreeMap<usize, Vec<Verdict>>,
) -> (usize, usize) {
    let hallucinated = fact_map
        .values()
        .filter(|vs| vs.iter().any(|v| !counts_as_supported(v)))
        .count();
    (descriptive.len(), hallucinated)
}

/// Per-category supported fraction. Categories without facts are absent.
pub fn category_breakdown(
    facts: &[AtomicFact],
    verdicts: &[Verdict],
) -> Result<BTreeMap<FactCategory, f64>, ScoreError> {
    let pairs = align(facts, verdicts)?;
    let mut out = BTreeMap::new();
    for cat in FactCategory::ALL {
        let in_cat = pairs.iter().copied().filter(|(f, _)| f.category == cat);
        if let Some(frac) = weighted_fraction(in_cat) {
            out.insert(cat, frac);
        }
    }
    Ok(out)
}

/// Supported/total counts per category (unweighted), including empty categories
/// only when they have facts.
pub fn category_counts(
    facts: &[AtomicFact],
    verdicts: &[Verdict],
) -> Result<BTreeMap<FactCategory, CategoryCount>, ScoreError> {
    let pairs = align(facts, verdicts)?;
    let mut out: BTreeMap<FactCategory, CategoryCount> = BTreeMap::new();
    for (f, v) in pairs {
        let entry = out.entry(f.category).or_default();
        entry.total += 1;
        if counts_as_supported(v) {
            entry.supported += 1;
        }
    }
    Ok(out)
}

/// Maps `n` annotated facts with `x` hallucinations onto the 1-5 Likert scale.
///
/// Rules apply in priority order: `x == n` gives 1, `x == 0` gives 5,
/// `x > n/2` gives 2, `n/3 <= x <= n/2` gives 3 and `x < n/3` gives 4.
pub fn likert_from_counts(n: usize, x: usize) -> Result<u8, ScoreError> {
    if n == 0 {
        return Err(ScoreError::Domain("Likert needs at least one fact".into()));
    }
    if x > n {
        return Err(ScoreError::Domain(format!(
            "{x} hallucinated facts exceed the {n} total"
        )));
    }
    let score = if x == n {
        1
    } else if x == 0 {
        5
    } else if 2 * x > n {
        2
    } else if 3 * x >= n {
        3
    } else {
        4
    };
    Ok(score)
}

/// Scores one sample from its labeled sub-sentences, facts and verdicts.
pub fn score_sample(
    subsentences: &[SubSentence],
    facts: &[AtomicFact],
    verdicts: &[Verdict],
) -> Result<SampleScore, ScoreError> {
    let faithscore = compute_faithscore(facts, verdicts)?;
    let per_category = category_counts(facts, verdicts)?;

    let by_id: HashMap<&str, &Verdict> = verdicts.iter().map(|v| (v.fact_id.as_str(), v)).collect();
    let mut fact_map: BTreeMap<usize, Vec<Verdict>> = BTreeMap::new();
    for f in facts {
        // align() already guaranteed every fact has a verdict
        let v = by_id[f.fact_id.as_str()];
        fact_map
            .entry(f.source_subsentence)
            .or_default()
            .push(v.clone());
    }
    let sentence_score = compute_sentence_score(subsentences, &fact_map)?;
    let descriptive: HashSet<usize> = subsentences
        .iter()
        .filter(|s| s.is_descriptive())
        .map(|s| s.index)
        .collect();
    let (n_desc, n_halluc) = sentence_counts(&descriptive, &fact_map);

    Ok(SampleScore {
        faithscore,
        sentence_score,
        per_category,
        n_subsentences_descriptive: n_desc,
        n_subsentences_hallucinated: n_halluc,
        n_facts: facts.len(),
    })
}

/// Task column of a corpus table. `Overall` pools the instruction-following
/// tasks (everything except captioning) of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskGroup {
    Task(TaskCategory),
    Overall,
}

impl TaskGroup {
    pub fn label(self) -> &'static str {
        match self {
            TaskGroup::Task(t) => t.display_name(),
            TaskGroup::Overall => "Overall",
        }
    }
}

/// One scored sample as seen by corpus aggregation.
#[derive(Debug, Clone)]
pub struct ScoredSample<'a> {
    pub sample_id: &'a str,
    pub model_name: &'a str,
    pub task: TaskCategory,
    pub score: &'a SampleScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub mean: f64,
    /// Samples contributing to the mean, sorted.
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub model_name: String,
    pub group: TaskGroup,
    pub faithscore: Option<MeanCell>,
    pub sentence_score: Option<MeanCell>,
    pub n_samples: usize,
    /// Samples without a fact-level score (no facts).
    pub excluded_faithscore: usize,
    /// Samples without a sentence-level score (no descriptive sub-sentences).
    pub excluded_sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWarning {
    pub model_name: String,
    pub group: TaskGroup,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusTable {
    pub groups: Vec<GroupMeans>,
    pub warnings: Vec<AggregationWarning>,
}

impl CorpusTable {
    pub fn get(&self, model_name: &str, group: TaskGroup) -> Option<&GroupMeans> {
        self.groups
            .iter()
            .find(|g| g.model_name == model_name && g.group == group)
    }

    pub fn models(&self) -> Vec<&str> {
        let mut models: Vec<&str> = self.groups.iter().map(|g| g.model_name.as_str()).collect();
        models.dedup();
        models
    }
}

fn mean_cell(mut values: Vec<(&str, f64)>) -> Option<MeanCell> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.0.cmp(b.0));
    let sum: f64 = values.iter().map(|(_, v)| v).sum();
    Some(MeanCell {
        mean: sum / values.len() as f64,
        sample_ids: values.into_iter().map(|(id, _)| id.to_string()).collect(),
    })
}

/// Means of present scores per (model, task), plus an `Overall` group per
/// model over its non-caption samples.
///
/// Samples marked [`ScoreValue::NoDescriptiveContent`] are left out of the
/// corresponding mean and tallied. Groups with nothing left are dropped with a
/// warning.
pub fn aggregate_corpus(scores: &[ScoredSample<'_>]) -> CorpusTable {
    let mut buckets: BTreeMap<(&str, TaskGroup), Vec<&ScoredSample<'_>>> = BTreeMap::new();
    for s in scores {
        buckets
            .entry((s.model_name, TaskGroup::Task(s.task)))
            .or_default()
            .push(s);
        if s.task != TaskCategory::Caption {
            buckets
                .entry((s.model_name, TaskGroup::Overall))
                .or_default()
                .push(s);
        }
    }

    let mut table = CorpusTable::default();
    for ((model, group), members) in buckets {
        let faith: Vec<(&str, f64)> = members
            .iter()
            .filter_map(|s| s.score.faithscore.value().map(|v| (s.sample_id, v)))
            .collect();
        let sentence: Vec<(&str, f64)> = members
            .iter()
            .filter_map(|s| s.score.sentence_score.value().map(|v| (s.sample_id, v)))
            .collect();
        let excluded_faithscore = members.len() - faith.len();
        let excluded_sentence = members.len() - sentence.len();
        let faithscore = mean_cell(faith);
        let sentence_score = mean_cell(sentence);

        if faithscore.is_none() && sentence_score.is_none() {
            table.warnings.push(AggregationWarning {
                model_name: model.to_string(),
                group,
                message: format!(
                    "all {} sample(s) lack descriptive content; group omitted",
                    members.len()
                ),
            });
            continue;
        }
        if faithscore.is_none() {
            table.warnings.push(AggregationWarning {
                model_name: model.to_string(),
                group,
                message: "no sample has atomic facts; fact-level mean omitted".into(),
            });
        }
        table.groups.push(GroupMeans {
            model_name: model.to_string(),
            group,
            faithscore,
            sentence_score,
            n_samples: members.len(),
            excluded_faithscore,
            excluded_sentence,
        });
    }
    table
}
