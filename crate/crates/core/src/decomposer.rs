//! Turns descriptive sub-sentences into categorized atomic facts, and lints
//! the result for facts that are not atomic.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::error::{ParseError, StageError};
use crate::template::PromptTemplate;
use crate::types::{AtomicFact, FactCategory, SubSentence};

const DEFAULT_TEMPLATE: &str = include_str!("../templates/decomposer.txt");

pub const TEMPLATE_FILE: &str = "decomposer.txt";

pub const REPAIR_REMINDER: &str = "Your previous reply did not follow the required format. Reply with exactly the five headers `Entity:`, `Count:`, `Color:`, `Relation:` and `Other:`, each on its own line, with that category's facts below it as lines starting with `- `, and nothing else.";

/// Prompt template for the decomposer; needs `{descriptive_text}` exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposerTemplate {
    inner: PromptTemplate,
}

impl DecomposerTemplate {
    pub fn new(inner: PromptTemplate) -> Result<DecomposerTemplate, StageError> {
        inner
            .check_placeholders(&["descriptive_text"])
            .map_err(StageError::Template)?;
        Ok(DecomposerTemplate { inner })
    }

    pub fn parse(text: &str) -> Result<DecomposerTemplate, StageError> {
        DecomposerTemplate::new(PromptTemplate::parse(text).map_err(StageError::Template)?)
    }

    pub fn builtin() -> DecomposerTemplate {
        DecomposerTemplate::parse(DEFAULT_TEMPLATE).expect("bundled decomposer template is valid")
    }

    pub fn load_dir(dir: &Path) -> Result<DecomposerTemplate, StageError> {
        let path = dir.join(TEMPLATE_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| StageError::Template(format!("{}: {e}", path.display())))?;
        DecomposerTemplate::parse(&text)
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.inner
    }

    pub fn render(&self, descriptive_text: &str) -> String {
        let examples = self
            .inner
            .in_context_examples
            .iter()
            .map(|ex| format!("Text: {}\nFacts:\n{}", ex.input, ex.output))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.inner
            .render(&examples, &[("descriptive_text", descriptive_text)])
    }
}

/// Parses the sectioned fact list. All five headers must appear exactly once,
/// in any order; every other non-blank line must be a `- statement` bullet
/// under a header.
pub fn parse_sections(raw: &str) -> Result<Vec<(FactCategory, String)>, String> {
    let mut current: Option<FactCategory> = None;
    let mut seen = BTreeSet::new();
    let mut facts = Vec::new();
    for (no, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(statement) = line.strip_prefix('-') {
            let statement = statement.trim();
            let cat = current.ok_or_else(|| format!("line {}: fact before any section header", no + 1))?;
            if statement.is_empty() {
                return Err(format!("line {}: empty fact", no + 1));
            }
            facts.push((cat, statement.to_string()));
            continue;
        }
        if let Some(header) = line.strip_suffix(':') {
            let cat = FactCategory::from_header(header.trim())
                .ok_or_else(|| format!("line {}: unknown section header {line:?}", no + 1))?;
            if !seen.insert(cat) {
                return Err(format!("line {}: section {header} repeated", no + 1));
            }
            current = Some(cat);
            continue;
        }
        return Err(format!("line {}: stray line {line:?}", no + 1));
    }
    let missing: Vec<&str> = FactCategory::ALL
        .iter()
        .filter(|c| !seen.contains(*c))
        .map(|c| c.header())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing section header(s): {}", missing.join(", ")));
    }
    Ok(facts)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "there", "of", "in", "on", "at", "and",
    "or", "with", "to", "it", "its", "this", "that", "these", "those", "has", "have", "some",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Index of the candidate sub-sentence sharing the most content words with
/// `statement`; ties go to the earliest one.
pub fn attribute_source(statement: &str, candidates: &[SubSentence]) -> Option<usize> {
    let fact = content_tokens(statement);
    let mut best: Option<(usize, usize)> = None;
    for s in candidates {
        let overlap = content_tokens(&s.text).intersection(&fact).count();
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((s.index, overlap));
        }
    }
    best.map(|(i, _)| i)
}

/// Decomposes the descriptive sub-sentences with a single backend call over
/// their concatenation. Facts get ids `f1, f2, ...` in response order and unit
/// weight. With no descriptive input the backend is not called.
pub fn decompose(
    descriptive: &[SubSentence],
    template: &DecomposerTemplate,
    backend: &Backend,
) -> Result<Vec<AtomicFact>, StageError> {
    if let Some(s) = descriptive.iter().find(|s| !s.is_descriptive()) {
        return Err(StageError::Template(format!(
            "sub-sentence {} is not labeled descriptive",
            s.index
        )));
    }
    if descriptive.is_empty() {
        return Ok(Vec::new());
    }
    let text = descriptive
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let prompt = template.render(&text);
    let first = backend.complete(&prompt)?;
    let parsed = match parse_sections(&first) {
        Ok(p) => p,
        Err(reason) => {
            log::debug!("decomposer reply malformed ({reason}); retrying once");
            let second = backend.complete(&format!("{prompt}\n\n{REPAIR_REMINDER}"))?;
            parse_sections(&second).map_err(|reason| ParseError {
                stage: "decomposer",
                reason,
                raw: second,
            })?
        }
    };
    Ok(parsed
        .into_iter()
        .enumerate()
        .map(|(i, (category, statement))| {
            let source = attribute_source(&statement, descriptive).expect("non-empty candidates");
            AtomicFact::new(format!("f{}", i + 1), source, category, statement)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LintReason {
    /// A coordinating conjunction joins two clauses.
    MultipleClauses { conjunction: String },
    /// An Entity fact names more than two objects.
    TooManyEntities { count: usize },
    /// Same statement as an earlier fact, ignoring case and whitespace.
    Duplicate { of: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub fact_id: String,
    pub reason: LintReason,
}

const CONJUNCTIONS: &[&str] = &["and", "but", "or", "while", "whereas", "yet"];

const VERB_MARKERS: &[&str] = &[
    "is", "are", "was", "were", "has", "have", "had", "can", "could", "will", "would", "does",
    "do", "did", "seems", "appears", "looks", "stands", "sits", "holds", "wears",
];

fn words(statement: &str) -> Vec<String> {
    statement
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ';' | ':' | '!' | '?'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn has_verb(words: &[String]) -> bool {
    words
        .iter()
        .any(|w| VERB_MARKERS.contains(&w.as_str()) || (w.len() > 4 && w.ends_with("ing")))
}

/// Noun phrases counted by their determiners or numerals ("a man", "two dogs").
fn entity_mentions(words: &[String]) -> usize {
    const DETERMINERS: &[&str] = &[
        "a", "an", "the", "some", "another", "two", "three", "four", "five", "six", "several",
        "many",
    ];
    words
        .iter()
        .enumerate()
        .filter(|(i, w)| {
            DETERMINERS.contains(&w.as_str())
                // "There is a" / "the" right after another determiner counts once
                && !(i > &0 && DETERMINERS.contains(&words[i - 1].as_str()))
        })
        .count()
}

pub(crate) fn normalize(statement: &str) -> String {
    statement
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Advisory atomicity checks; never rejects a fact.
pub fn lint_atomicity(facts: &[AtomicFact]) -> Vec<LintFinding> {
    let mut findings = Vec::new();
    let mut first_seen: HashMap<String, &str> = HashMap::new();
    for f in facts {
        let ws = words(&f.statement);
        for (i, w) in ws.iter().enumerate() {
            if CONJUNCTIONS.contains(&w.as_str()) && has_verb(&ws[..i]) && has_verb(&ws[i + 1..]) {
                findings.push(LintFinding {
                    fact_id: f.fact_id.clone(),
                    reason: LintReason::MultipleClauses {
                        conjunction: w.clone(),
                    },
                });
                break;
            }
        }
        if f.category == FactCategory::Entity {
            let count = entity_mentions(&ws);
            if count > 2 {
                findings.push(LintFinding {
                    fact_id: f.fact_id.clone(),
                    reason: LintReason::TooManyEntities { count },
                });
            }
        }
        let key = normalize(&f.statement);
        match first_seen.get(&key) {
            Some(of) => findings.push(LintFinding {
                fact_id: f.fact_id.clone(),
                reason: LintReason::Duplicate { of: of.to_string() },
            }),
            None => {
                first_seen.insert(key, &f.fact_id);
            }
        }
    }
    findings
}

/// Whether two statements count as duplicates for linting.
pub fn is_duplicate(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendConfig, Script};
    use crate::types::SubSentenceLabel;

    const CANONICAL: &str = "Entity:\n- There is a car.\nCount:\nColor:\n- The car is red.\nRelation:\nOther:\n";

    fn desc(index: usize, text: &str) -> SubSentence {
        SubSentence {
            index,
            text: text.into(),
            label: Some(SubSentenceLabel::Descriptive),
        }
    }

    #[test]
    fn parses_canonical_grammar() {
        let facts = parse_sections(CANONICAL).unwrap();
        assert_eq!(
            facts,
            vec![
                (FactCategory::Entity, "There is a car.".into()),
                (FactCategory::Color, "The car is red.".into())
            ]
        );
        let reordered = "Other:\n- The building is very tall.\nRelation:\nColor:\nCount:\nEntity:\n";
        assert_eq!(
            parse_sections(reordered).unwrap(),
            vec![(FactCategory::Other, "The building is very tall.".into())]
        );
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "Entity:\n- x\n",
            "Entity:\nCount:\nColor:\nRelation:\nOther:\nShape:\n",
            "Entity:\nEntity:\nCount:\nColor:\nRelation:\nOther:\n",
            "- x\nEntity:\nCount:\nColor:\nRelation:\nOther:\n",
            "Entity:\nhello\nCount:\nColor:\nRelation:\nOther:\n",
            "Entity:\n-   \nCount:\nColor:\nRelation:\nOther:\n",
        ] {
            assert!(parse_sections(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn attribution_prefers_overlap_then_earliest() {
        let subs = [desc(0, "A red car is parked."), desc(2, "A man stands next to the car.")];
        assert_eq!(attribute_source("The car is red.", &subs), Some(0));
        assert_eq!(attribute_source("There is a man.", &subs), Some(2));
        assert_eq!(attribute_source("There is a car.", &subs), Some(0));
        assert_eq!(attribute_source("The sky is blue.", &subs), Some(0));
        assert_eq!(attribute_source("x", &[]), None);
    }

    #[test]
    fn decompose_single_call_and_ids() {
        let subs = [desc(0, "A red car is parked."), desc(1, "The building is very tall.")];
        let t = DecomposerTemplate::parse("{descriptive_text}").unwrap();
        let response = "Entity:\n- There is a car.\n- There is a building.\nCount:\nColor:\n- The car is red.\nRelation:\nOther:\n- The building is very tall.\n";
        let script = Script::new().with("A red car is parked. The building is very tall.", response);
        let b = Backend::new(BackendConfig::scripted("m", script)).unwrap();
        let facts = decompose(&subs, &t, &b).unwrap();
        assert_eq!(b.upstream_calls(), 1);
        assert_eq!(facts.len(), 4);
        assert_eq!(facts[0].fact_id, "f1");
        assert_eq!(facts[1].source_subsentence, 1);
        assert_eq!(facts[3].category, FactCategory::Other);
        assert_eq!(facts[3].source_subsentence, 1);
        assert!(facts.iter().all(|f| f.weight == 1.0));
        assert!(!facts.iter().any(|f| f.category == FactCategory::Count));
    }

    #[test]
    fn decompose_skips_backend_without_input() {
        let t = DecomposerTemplate::builtin();
        let b = Backend::new(BackendConfig::scripted("m", Script::new())).unwrap();
        assert!(decompose(&[], &t, &b).unwrap().is_empty());
        assert_eq!(b.upstream_calls(), 0);
        let analytical = SubSentence { index: 0, text: "x".into(), label: Some(SubSentenceLabel::Analytical) };
        assert!(decompose(&[analytical], &t, &b).is_err());
    }

    #[test]
    fn lint_examples() {
        let f = |id: &str, cat, s: &str| AtomicFact::new(id, 0, cat, s);
        let two = lint_atomicity(&[f("a", FactCategory::Relation, "A man is sitting and a dog is running.")]);
        assert_eq!(two.len(), 1);
        assert!(matches!(two[0].reason, LintReason::MultipleClauses { .. }));

        let dup = lint_atomicity(&[
            f("a", FactCategory::Entity, "There is a car."),
            f("b", FactCategory::Entity, "there  is a CAR."),
        ]);
        assert_eq!(dup, vec![LintFinding { fact_id: "b".into(), reason: LintReason::Duplicate { of: "a".into() } }]);

        assert!(lint_atomicity(&[f("a", FactCategory::Entity, "There is a cat.")]).is_empty());
        assert!(lint_atomicity(&[f("a", FactCategory::Color, "The bus is red and white.")]).is_empty());

        let crowded = lint_atomicity(&[f("a", FactCategory::Entity, "There is a man with a dog and a cat.")]);
        assert!(crowded.iter().any(|l| matches!(l.reason, LintReason::TooManyEntities { count: 3 })));
    }

    #[test]
    fn duplicate_check_is_symmetric() {
        for (a, b) in [("A  car", "a car"), ("x", "y"), (" The Dog ", "the dog")] {
            assert_eq!(is_duplicate(a, b), is_duplicate(b, a));
        }
    }
}
