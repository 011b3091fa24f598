use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::HarnessError;
use crate::types::{ImageRef, Sample, TaskCategory};

/// Prompt every captioning sample must carry.
pub const CAPTION_PROMPT: &str = "Generate a concise caption for the given image";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawImage {
    Locator(String),
    Full { locator: String, content_hash: Option<String> },
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    image: RawImage,
    question: String,
    answer: String,
    model_name: String,
    task_category: String,
}

fn is_caption_prompt(question: &str) -> bool {
    question.trim().trim_end_matches('.').trim() == CAPTION_PROMPT
}

/// Loads and validates samples. Image locators resolve relative to the
/// dataset file; each image is read once to record its SHA-256.
pub fn load_samples(path: &Path, format: DatasetFormat) -> Result<Vec<Sample>, HarnessError> {
    let DatasetFormat::Jsonl = format;
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |reason: String| HarnessError::Load {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if raw.id.trim().is_empty() {
            return Err(err("empty id".into()));
        }
        if raw.answer.trim().is_empty() {
            return Err(err("empty answer".into()));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(err(format!("duplicate id {:?}", raw.id)));
        }
        let task = TaskCategory::parse_loose(&raw.task_category)
            .ok_or_else(|| err(format!("unknown task_category {:?}", raw.task_category)))?;
        if task == TaskCategory::Caption && !is_caption_prompt(&raw.question) {
            return Err(err(format!(
                "caption samples must use the prompt {CAPTION_PROMPT:?}, got {:?}",
                raw.question
            )));
        }
        let (locator, expected) = match raw.image {
            RawImage::Locator(l) => (l, None),
            RawImage::Full { locator, content_hash } => (locator, content_hash),
        };
        let image = ImageRef::load(&locator, base).map_err(|e| err(e.to_string()))?;
        if let Some(expected) = expected {
            if !expected.eq_ignore_ascii_case(&image.content_hash) {
                return Err(err(format!(
                    "image hash mismatch: file says {expected}, bytes hash to {}",
                    image.content_hash
                )));
            }
        }
        samples.push(Sample {
            id: raw.id,
            image,
            question: raw.question,
            answer: raw.answer,
            model_name: raw.model_name,
            task_category: task,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
        std::fs::write(dir.join("img.jpg"), b"jpeg").unwrap();
        let p = dir.join("data.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn loads_caption_and_llava_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            &[
                r#"{"id":"c1","image":"img.jpg","question":"Generate a concise caption for the given image","answer":"A cat.","model_name":"m","task_category":"caption"}"#,
                "",
                r#"{"id":"q1","image":"img.jpg","question":"Why?","answer":"Because.","model_name":"m","task_category":"complex question"}"#,
            ],
        );
        let s = load_samples(&p, DatasetFormat::Jsonl).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].task_category, TaskCategory::Caption);
        assert_eq!(s[1].task_category, TaskCategory::ComplexQuestion);
        assert_eq!(s[0].image.content_hash, crate::types::sha256_hex(b"jpeg"));
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            &[
                r#"{"id":"a","image":"img.jpg","question":"q","answer":"x","model_name":"m","task_category":"conversation"}"#,
                r#"{"id":"b","image":"img.jpg","question":"q","model_name":"m","task_category":"conversation"}"#,
            ],
        );
        match load_samples(&p, DatasetFormat::Jsonl) {
            Err(HarnessError::Load { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("answer"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_bad_caption_prompt_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"id":"a","image":"img.jpg","question":"q","answer":"x","model_name":"m","task_category":"conversation"}"#;
        let p = write(dir.path(), &[line, line]);
        assert!(matches!(load_samples(&p, DatasetFormat::Jsonl), Err(HarnessError::Load { line: 2, .. })));

        let p = write(
            dir.path(),
            &[r#"{"id":"a","image":"img.jpg","question":"Describe it","answer":"x","model_name":"m","task_category":"caption"}"#],
        );
        assert!(load_samples(&p, DatasetFormat::Jsonl).is_err());

        let p = write(
            dir.path(),
            &[r#"{"id":"a","image":{"locator":"img.jpg","content_hash":"00"},"question":"q","answer":"x","model_name":"m","task_category":"conversation"}"#],
        );
        assert!(load_samples(&p, DatasetFormat::Jsonl).is_err());
    }
}
