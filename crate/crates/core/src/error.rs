use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read image {locator}: {reason}")]
    Unreadable { locator: String, reason: String },
    #[error("image {locator} hash mismatch: expected {expected}, got {actual}")]
    HashMismatch {
        locator: String,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("scripted backend has no response for key {key}")]
    ScriptMiss { key: String },
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BackendError {
    /// Attempts spent before giving up, when the failure was a transport failure.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            BackendError::Transport { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

/// A model response that does not follow the expected output grammar.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} output unparseable after repair retry: {reason}\n--- raw response ---\n{raw}")]
pub struct ParseError {
    pub stage: &'static str,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("kappa undefined: {0}")]
    UndefinedKappa(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: {reason}")]
    Load {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config hash mismatch on resume: ledger has {ledger}, current config is {current}; use a fresh output directory or restore the original config")]
    ConfigMismatch { ledger: String, current: String },
    #[error("output directory {0} already holds a run; pass --resume to continue it")]
    RunExists(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no results to report")]
    EmptyResults,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Input(#[from] InputError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
