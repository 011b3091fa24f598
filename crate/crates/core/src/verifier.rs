//! Checks atomic facts against the image, one entailment call per fact.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::backends::Backend;
use crate::error::BackendError;
use crate::types::{AtomicFact, ImageRef, Verdict};

pub fn verify_fact(fact: &AtomicFact, image: &ImageRef, backend: &Backend) -> Result<Verdict, BackendError> {
    let e = backend.entail(image, &fact.statement)?;
    Ok(Verdict {
        fact_id: fact.fact_id.clone(),
        supported: e.supported && !e.ambiguous,
        raw_response: e.raw_response,
        ambiguous: e.ambiguous,
    })
}

/// Verifies every fact with up to `workers` concurrent calls. Verdicts come
/// back in fact order. The first failure aborts the sample.
pub fn verify_sample(
    facts: &[AtomicFact],
    image: &ImageRef,
    backend: &Backend,
    workers: usize,
) -> Result<Vec<Verdict>, BackendError> {
    let workers = workers.clamp(1, facts.len().max(1));
    if workers == 1 {
        return facts.iter().map(|f| verify_fact(f, image, backend)).collect();
    }

    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Verdict>>> = Mutex::new(vec![None; facts.len()]);
    let first_error: Mutex<Option<(usize, BackendError)>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(fact) = facts.get(i) else { break };
                match verify_fact(fact, image, backend) {
                    Ok(v) => slots.lock().expect("slots lock")[i] = Some(v),
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        let mut slot = first_error.lock().expect("error lock");
                        // keep the error of the lowest fact index for stable reporting
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some((_, e)) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    Ok(slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|v| v.expect("every slot filled when no worker failed"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendConfig, BackendKind, Script};
    use crate::score::compute_faithscore;
    use crate::types::{FactCategory, ScoreValue};

    fn setup() -> (tempfile::TempDir, ImageRef) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("i.png"), b"png").unwrap();
        let img = ImageRef::load("i.png", Some(dir.path())).unwrap();
        (dir, img)
    }

    fn facts(n: usize) -> Vec<AtomicFact> {
        (0..n)
            .map(|i| AtomicFact::new(format!("f{}", i + 1), 0, FactCategory::Entity, format!("There is object {i}.")))
            .collect()
    }

    #[test]
    fn single_fact_responses() {
        let (dir, img) = setup();
        let script = Script::new().with("A", "yes").with("B", "no").with("C", "maybe");
        let b = Backend::new(BackendConfig::scripted("v", script)).unwrap().with_image_root(dir.path());
        let v = verify_fact(&AtomicFact::new("a", 0, FactCategory::Entity, "A"), &img, &b).unwrap();
        assert!(v.supported && !v.ambiguous && v.fact_id == "a");
        let v = verify_fact(&AtomicFact::new("b", 0, FactCategory::Entity, "B"), &img, &b).unwrap();
        assert!(!v.supported && !v.ambiguous);
        let v = verify_fact(&AtomicFact::new("c", 0, FactCategory::Entity, "C"), &img, &b).unwrap();
        assert!(!v.supported && v.ambiguous);
    }

    #[test]
    fn eleven_facts_eight_supported() {
        let (dir, img) = setup();
        let fs = facts(11);
        let mut script = Script::new();
        for (i, f) in fs.iter().enumerate() {
            script = script.with(f.statement.clone(), if [2, 5, 9].contains(&i) { "No." } else { "Yes." });
        }
        let b = Backend::new(BackendConfig::scripted("v", script)).unwrap().with_image_root(dir.path());
        for workers in [1, 4] {
            let vs = verify_sample(&fs, &img, &b, workers).unwrap();
            assert_eq!(vs.len(), 11);
            assert!(vs.iter().zip(&fs).all(|(v, f)| v.fact_id == f.fact_id));
            assert_eq!(vs.iter().filter(|v| v.supported).count(), 8);
            assert_eq!(compute_faithscore(&fs, &vs).unwrap(), ScoreValue::Value(8.0 / 11.0));
        }
    }

    #[test]
    fn empty_facts() {
        let (dir, img) = setup();
        let b = Backend::new(BackendConfig::scripted("v", Script::new())).unwrap().with_image_root(dir.path());
        assert!(verify_sample(&[], &img, &b, 4).unwrap().is_empty());
    }

    #[test]
    fn backend_down_fails_sample() {
        let (dir, img) = setup();
        let mut cfg = BackendConfig::http(BackendKind::VisualEntailment, "http://127.0.0.1:9/verify", "v");
        cfg.max_retries = 1;
        cfg.retry_backoff_ms = 0;
        cfg.timeout_secs = 2.0;
        let b = Backend::new(cfg).unwrap().with_image_root(dir.path());
        let err = verify_sample(&facts(1), &img, &b, 2).unwrap_err();
        assert_eq!(err.attempts(), Some(2));
    }

    #[test]
    fn permuting_facts_permutes_verdicts() {
        let (dir, img) = setup();
        let fs = facts(6);
        let mut script = Script::new();
        for (i, f) in fs.iter().enumerate() {
            script = script.with(f.statement.clone(), if i % 2 == 0 { "yes" } else { "no" });
        }
        let b = Backend::new(BackendConfig::scripted("v", script)).unwrap().with_image_root(dir.path());
        let forward = verify_sample(&fs, &img, &b, 3).unwrap();
        let mut rev = fs.clone();
        rev.reverse();
        let mut backward = verify_sample(&rev, &img, &b, 3).unwrap();
        backward.reverse();
        assert_eq!(forward, backward);
    }
}
