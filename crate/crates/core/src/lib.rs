//! Reference-free faithfulness scoring for free-form answers of
//! vision-language models.
//!
//! An answer is split into sub-sentences, the descriptive ones are decomposed
//! into typed atomic facts, each fact is checked against the image with a
//! visual-entailment model, and the verdicts are aggregated into a score.

pub mod backends;
pub mod decomposer;
pub mod error;
pub mod harness;
pub mod meta_eval;
pub mod recognizer;
pub mod score;
pub mod stats;
pub mod template;
pub mod types;
pub mod verifier;

pub use error::{BackendError, HarnessError, InputError, ParseError, ScoreError, StageError, StatsError};
pub use types::{
    AtomicFact, CategoryCount, FactCategory, ImageRef, Sample, SampleScore, ScoreValue, SubSentence,
    SubSentenceLabel, TaskCategory, Verdict,
};
