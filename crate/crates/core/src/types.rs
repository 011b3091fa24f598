//! Domain types shared by every pipeline stage.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::InputError;

/// Task category of a sample, matching the benchmark splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    Conversation,
    DetailedDescription,
    ComplexQuestion,
    Caption,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::Conversation,
        TaskCategory::DetailedDescription,
        TaskCategory::ComplexQuestion,
        TaskCategory::Caption,
    ];

    /// Parses the loose spellings found in dataset files ("complex question",
    /// "detail", "complex_reasoning", ...).
    pub fn parse_loose(raw: &str) -> Option<TaskCategory> {
        let norm: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "conversation" | "conv" => Some(TaskCategory::Conversation),
            "detaileddescription" | "detail" | "detailed" | "description" => {
                Some(TaskCategory::DetailedDescription)
            }
            "complexquestion" | "complex" | "complexreasoning" => Some(TaskCategory::ComplexQuestion),
            "caption" | "captioning" | "imagecaption" => Some(TaskCategory::Caption),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TaskCategory::Conversation => "Conversation",
            TaskCategory::DetailedDescription => "Detailed Description",
            TaskCategory::ComplexQuestion => "Complex Question",
            TaskCategory::Caption => "Caption",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Reference to an image plus the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub locator: String,
    /// Lowercase hex SHA-256 of the image bytes.
    pub content_hash: String,
}

impl ImageRef {
    /// Reads the image and records its digest. Relative paths resolve against `base`.
    pub fn load(locator: &str, base: Option<&Path>) -> Result<ImageRef, InputError> {
        let bytes = read_locator(locator, base)?;
        Ok(ImageRef {
            locator: locator.to_string(),
            content_hash: sha256_hex(&bytes),
        })
    }

    /// Resolves the bytes and checks them against the stored digest.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Vec<u8>, InputError> {
        let bytes = read_locator(&self.locator, base)?;
        let actual = sha256_hex(&bytes);
        if actual != self.content_hash {
            return Err(InputError::HashMismatch {
                locator: self.locator.clone(),
                expected: self.content_hash.clone(),
                actual,
            });
        }
        Ok(bytes)
    }
}

pub(crate) fn resolve_path(locator: &str, base: Option<&Path>) -> PathBuf {
    let raw = locator.strip_prefix("file://").unwrap_or(locator);
    let path = PathBuf::from(raw);
    match base {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

fn read_locator(locator: &str, base: Option<&Path>) -> Result<Vec<u8>, InputError> {
    if locator.starts_with("http://") || locator.starts_with("https://") {
        let resp = reqwest::blocking::get(locator).map_err(|e| InputError::Unreadable {
            locator: locator.to_string(),
            reason: e.to_string(),
        })?;
        if !resp.status().is_success() {
            return Err(InputError::Unreadable {
                locator: locator.to_string(),
                reason: format!("HTTP {}", resp.status()),
            });
        }
        let bytes = resp.bytes().map_err(|e| InputError::Unreadable {
            locator: locator.to_string(),
            reason: e.to_string(),
        })?;
        return Ok(bytes.to_vec());
    }
    let path = resolve_path(locator, base);
    std::fs::read(&path).map_err(|e| InputError::Unreadable {
        locator: locator.to_string(),
        reason: format!("{}: {e}", path.display()),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One evaluation unit: an image, the question asked about it and a model's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: ImageRef,
    pub question: String,
    pub answer: String,
    pub model_name: String,
    pub task_category: TaskCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubSentenceLabel {
    Descriptive,
    Analytical,
}

impl SubSentenceLabel {
    pub fn code(self) -> char {
        match self {
            SubSentenceLabel::Descriptive => 'D',
            SubSentenceLabel::Analytical => 'A',
        }
    }

    pub fn from_code(code: &str) -> Option<SubSentenceLabel> {
        match code {
            "D" => Some(SubSentenceLabel::Descriptive),
            "A" => Some(SubSentenceLabel::Analytical),
            _ => None,
        }
    }
}

/// A fragment of an answer. `label` is `None` until the recognizer has run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSentence {
    pub index: usize,
    pub text: String,
    pub label: Option<SubSentenceLabel>,
}

impl SubSentence {
    pub fn is_descriptive(&self) -> bool {
        self.label == Some(SubSentenceLabel::Descriptive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactCategory {
    Entity,
    Count,
    Color,
    Relation,
    Other,
}

impl FactCategory {
    pub const ALL: [FactCategory; 5] = [
        FactCategory::Entity,
        FactCategory::Count,
        FactCategory::Color,
        FactCategory::Relation,
        FactCategory::Other,
    ];

    /// Section header used in decomposer output, without the colon.
    pub fn header(self) -> &'static str {
        match self {
            FactCategory::Entity => "Entity",
            FactCategory::Count => "Count",
            FactCategory::Color => "Color",
            FactCategory::Relation => "Relation",
            FactCategory::Other => "Other",
        }
    }

    pub fn from_header(header: &str) -> Option<FactCategory> {
        FactCategory::ALL.into_iter().find(|c| c.header() == header)
    }
}

impl fmt::Display for FactCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub fact_id: String,
    /// Index of the sub-sentence this fact was attributed to.
    pub source_subsentence: usize,
    pub category: FactCategory,
    pub statement: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl AtomicFact {
    pub fn new(
        fact_id: impl Into<String>,
        source_subsentence: usize,
        category: FactCategory,
        statement: impl Into<String>,
    ) -> AtomicFact {
        AtomicFact {
            fact_id: fact_id.into(),
            source_subsentence,
            category,
            statement: statement.into(),
            weight: 1.0,
        }
    }
}

/// Outcome of checking one fact against the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub fact_id: String,
    pub supported: bool,
    pub raw_response: String,
    pub ambiguous: bool,
}

impl Verdict {
    pub fn supported(fact_id: impl Into<String>) -> Verdict {
        Verdict {
            fact_id: fact_id.into(),
            supported: true,
            raw_response: "yes".into(),
            ambiguous: false,
        }
    }

    pub fn unsupported(fact_id: impl Into<String>) -> Verdict {
        Verdict {
            fact_id: fact_id.into(),
            supported: false,
            raw_response: "no".into(),
            ambiguous: false,
        }
    }
}

/// A score in `[0, 1]`, or the marker for answers with nothing to verify.
///
/// Serialized as a bare number or the string `"NoDescriptiveContent"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreValue {
    Value(f64),
    NoDescriptiveContent,
}

const NO_DESCRIPTIVE: &str = "NoDescriptiveContent";

impl ScoreValue {
    pub fn value(self) -> Option<f64> {
        match self {
            ScoreValue::Value(v) => Some(v),
            ScoreValue::NoDescriptiveContent => None,
        }
    }

    pub fn is_present(self) -> bool {
        matches!(self, ScoreValue::Value(_))
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreValue::Value(v) => write!(f, "{v:.4}"),
            ScoreValue::NoDescriptiveContent => f.write_str(NO_DESCRIPTIVE),
        }
    }
}

impl Serialize for ScoreValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ScoreValue::Value(v) => serializer.serialize_f64(*v),
            ScoreValue::NoDescriptiveContent => serializer.serialize_str(NO_DESCRIPTIVE),
        }
    }
}

impl<'de> Deserialize<'de> for ScoreValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;

        impl Visitor<'_> for ScoreVisitor {
            type Value = ScoreValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number or \"{NO_DESCRIPTIVE}\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ScoreValue, E> {
                Ok(ScoreValue::Value(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ScoreValue, E> {
                Ok(ScoreValue::Value(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ScoreValue, E> {
                Ok(ScoreValue::Value(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ScoreValue, E> {
                if v == NO_DESCRIPTIVE {
                    Ok(ScoreValue::NoDescriptiveContent)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(ScoreVisitor)
    }
}

/// Supported and total fact counts for one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub supported: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub faithscore: ScoreValue,
    pub sentence_score: ScoreValue,
    pub per_category: std::collections::BTreeMap<FactCategory, CategoryCount>,
    pub n_subsentences_descriptive: usize,
    pub n_subsentences_hallucinated: usize,
    pub n_facts: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_value_serde() {
        let v = serde_json::to_string(&ScoreValue::Value(0.75)).unwrap();
        assert_eq!(v, "0.75");
        let m = serde_json::to_string(&ScoreValue::NoDescriptiveContent).unwrap();
        assert_eq!(m, "\"NoDescriptiveContent\"");
        assert_eq!(serde_json::from_str::<ScoreValue>("1").unwrap(), ScoreValue::Value(1.0));
        assert_eq!(
            serde_json::from_str::<ScoreValue>(&m).unwrap(),
            ScoreValue::NoDescriptiveContent
        );
        assert!(serde_json::from_str::<ScoreValue>("\"nope\"").is_err());
    }

    #[test]
    fn loose_task_names() {
        assert_eq!(
            TaskCategory::parse_loose("complex question"),
            Some(TaskCategory::ComplexQuestion)
        );
        assert_eq!(
            TaskCategory::parse_loose("Detailed_Description"),
            Some(TaskCategory::DetailedDescription)
        );
        assert_eq!(TaskCategory::parse_loose("caption"), Some(TaskCategory::Caption));
        assert_eq!(TaskCategory::parse_loose("poetry"), None);
    }

    #[test]
    fn image_hash_checked_on_resolve() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"abc").unwrap();
        let img = ImageRef::load("a.png", Some(dir.path())).unwrap();
        assert_eq!(img.content_hash, sha256_hex(b"abc"));
        assert_eq!(img.resolve(Some(dir.path())).unwrap(), b"abc");
        std::fs::write(dir.path().join("a.png"), b"abd").unwrap();
        assert!(matches!(
            img.resolve(Some(dir.path())),
            Err(InputError::HashMismatch { .. })
        ));
        assert!(ImageRef::load("missing.png", Some(dir.path())).is_err());
    }
}
