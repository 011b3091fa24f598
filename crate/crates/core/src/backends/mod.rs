//! Clients for the external model services: a text-completion backend used by
//! the recognizer and decomposer, and a visual-entailment backend used by the
//! verifier. Both share response caching, retries and a scripted mock mode.
//!
//! Wire shapes:
//!
//! * text: `{"model", "messages": [{"role", "content"}], ...params}` → `{"content"}`
//! * entailment: `{"model", "statement", "prompt", "image_b64", ...params}` → `{"content"}`

mod cache;
mod transport;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::BackendError;
use crate::types::{sha256_hex, ImageRef};

pub use cache::{canonical_json, make_cache_key, CacheEntry, CacheKey, ResponseCache};
pub use transport::{CountingTransport, HttpReply, HttpTransport, Transport, TransportFailure};

/// Prompt sent to the entailment model for each atomic fact.
pub const ENTAILMENT_PROMPT: &str =
    "Statement: {statement} Is this statement right according to the image? Please output yes or no.";

pub fn entailment_prompt(statement: &str) -> String {
    ENTAILMENT_PROMPT.replace("{statement}", statement)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    TextLLM,
    VisualEntailment,
    MockScripted,
}

/// Canned responses for [`BackendKind::MockScripted`].
///
/// Keys are either the exact request text (the prompt for completions, the
/// statement or the full entailment prompt for entailment) or the lowercase hex
/// SHA-256 of that text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    /// Returned when no key matches; a miss is an error otherwise.
    #[serde(default)]
    pub default: Option<String>,
}

impl Script {
    pub fn new() -> Script {
        Script::default()
    }

    pub fn with(mut self, key: impl Into<String>, response: impl Into<String>) -> Script {
        self.responses.insert(key.into(), response.into());
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Script {
        self.default = Some(response.into());
        self
    }

    fn lookup(&self, candidates: &[&str]) -> Result<String, BackendError> {
        for text in candidates {
            if let Some(r) = self.responses.get(*text) {
                return Ok(r.clone());
            }
            if let Some(r) = self.responses.get(&sha256_hex(text.as_bytes())) {
                return Ok(r.clone());
            }
        }
        self.default.clone().ok_or_else(|| BackendError::ScriptMiss {
            key: sha256_hex(candidates.first().copied().unwrap_or_default().as_bytes()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSource {
    Inline(Script),
    File(PathBuf),
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Base delay between attempts; doubles after each failure.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub cache_enabled: bool,
    /// On-disk cache location. With caching on and no directory, responses are
    /// cached in memory for the life of the client.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Decoding parameters (temperature, ...) merged into every request body.
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub script: Option<ScriptSource>,
}

impl BackendConfig {
    pub fn scripted(model_id: impl Into<String>, script: Script) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::MockScripted,
            endpoint: String::new(),
            model_id: model_id.into(),
            auth_token_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: 0,
            retry_backoff_ms: 0,
            cache_enabled: false,
            cache_dir: None,
            params: Map::new(),
            script: Some(ScriptSource::Inline(script)),
        }
    }

    pub fn http(kind: BackendKind, endpoint: impl Into<String>, model_id: impl Into<String>) -> BackendConfig {
        BackendConfig {
            kind,
            endpoint: endpoint.into(),
            script: None,
            ..BackendConfig::scripted(model_id, Script::new())
        }
    }

    /// Loads a JSON or TOML document, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<BackendConfig, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let mut config: BackendConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ScriptSource::File(p)) = &config.script {
            if p.is_relative() {
                config.script = Some(ScriptSource::File(base.join(p)));
            }
        }
        if let Some(dir) = &config.cache_dir {
            if dir.is_relative() {
                config.cache_dir = Some(base.join(dir));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        match self.kind {
            BackendKind::MockScripted if self.script.is_none() => {
                Err(BackendError::Config("scripted backend needs a script".into()))
            }
            BackendKind::TextLLM | BackendKind::VisualEntailment if self.endpoint.is_empty() => {
                Err(BackendError::Config(format!("{:?} backend needs an endpoint", self.kind)))
            }
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Backend kind and model, the cache namespace for this configuration.
    pub fn fingerprint(&self) -> String {
        format!("{:?}:{}", self.kind, self.model_id)
    }

    /// The configuration fields that influence responses, for run hashing.
    pub fn identity(&self) -> Value {
        json!({
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model_id": self.model_id,
            "params": self.params,
            "script": self.script,
        })
    }
}

/// Parsed entailment response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entailment {
    pub supported: bool,
    pub ambiguous: bool,
    pub raw_response: String,
}

/// Reads a yes/no answer from the first word of the response.
///
/// Punctuation around the word is ignored and matching is case-insensitive.
/// Anything else is unsupported and flagged ambiguous.
pub fn parse_entailment(raw: &str) -> Entailment {
    let first = raw
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|t| !t.is_empty())
        .map(str::to_ascii_lowercase);
    let (supported, ambiguous) = match first.as_deref() {
        Some("yes") => (true, false),
        Some("no") => (false, false),
        _ => (false, true),
    };
    Entailment {
        supported,
        ambiguous,
        raw_response: raw.to_string(),
    }
}

/// A configured client. Shareable across threads.
pub struct Backend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    script: Option<Script>,
    image_root: Option<PathBuf>,
    upstream_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Backend, BackendError> {
        Backend::with_transport(config, Arc::new(HttpTransport::new()))
    }

    pub fn with_transport(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Backend, BackendError> {
        config.validate()?;
        let script = match &config.script {
            Some(ScriptSource::Inline(s)) => Some(s.clone()),
            Some(ScriptSource::File(p)) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| BackendError::Config(format!("script {}: {e}", p.display())))?;
                Some(
                    serde_json::from_str(&text)
                        .map_err(|e| BackendError::Config(format!("script {}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        let cache = config.cache_enabled.then(|| match &config.cache_dir {
            Some(dir) => ResponseCache::disk(dir),
            None => ResponseCache::memory(),
        });
        Ok(Backend {
            config,
            transport,
            cache,
            script,
            image_root: None,
            upstream_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    /// Directory that relative image locators resolve against.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Backend {
        self.image_root = Some(root.into());
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Requests that reached the script or the transport (cache misses,
    /// counting every retry attempt).
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// Sends a prompt to the text backend and returns the response verbatim.
    pub fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if self.config.kind == BackendKind::VisualEntailment {
            return Err(BackendError::Config(
                "complete() needs a text or scripted backend".into(),
            ));
        }
        let mut body = Map::new();
        body.insert("model".into(), json!(self.config.model_id));
        body.insert(
            "messages".into(),
            json!([{ "role": "user", "content": prompt }]),
        );
        let body = self.merge_params(body);
        self.cached(&body, None, || match &self.script {
            Some(script) => script.lookup(&[prompt]),
            None => self.post(&body),
        })
    }

    /// Asks the entailment backend whether the image supports `statement`.
    pub fn entail(&self, image: &ImageRef, statement: &str) -> Result<Entailment, BackendError> {
        if self.config.kind == BackendKind::TextLLM {
            return Err(BackendError::Config(
                "entail() needs an entailment or scripted backend".into(),
            ));
        }
        let bytes = image.resolve(self.image_root.as_deref())?;
        let prompt = entailment_prompt(statement);
        let mut body = Map::new();
        body.insert("model".into(), json!(self.config.model_id));
        body.insert("statement".into(), json!(statement));
        body.insert("prompt".into(), json!(prompt));
        let key_body = self.merge_params(body.clone());
        let raw = self.cached(&key_body, Some(&image.content_hash), || match &self.script {
            Some(script) => script.lookup(&[statement, &prompt]),
            None => {
                let mut wire = key_body.clone();
                wire["image_b64"] = json!(base64::engine::general_purpose::STANDARD.encode(&bytes));
                self.post(&wire)
            }
        })?;
        Ok(parse_entailment(&raw))
    }

    fn merge_params(&self, mut body: Map<String, Value>) -> Value {
        for (k, v) in &self.config.params {
            body.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(body)
    }

    fn cached(
        &self,
        payload: &Value,
        image_hash: Option<&str>,
        fetch: impl Fn() -> Result<String, BackendError>,
    ) -> Result<String, BackendError> {
        let Some(cache) = &self.cache else {
            return self.count(fetch);
        };
        let fingerprint = self.config.fingerprint();
        let key = make_cache_key(&fingerprint, payload, image_hash);
        if let Some(entry) = cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(entry.response);
        }
        let response = self.count(fetch)?;
        cache.put(
            &key,
            CacheEntry {
                key: key.to_hex(),
                response: response.clone(),
                created_at: Utc::now(),
                backend_fingerprint: fingerprint,
            },
        )?;
        Ok(response)
    }

    fn count(&self, fetch: impl Fn() -> Result<String, BackendError>) -> Result<String, BackendError> {
        if self.script.is_some() {
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
        }
        fetch()
    }

    fn bearer(&self) -> Result<Option<String>, BackendError> {
        match &self.config.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Config(format!("environment variable {var} is not set"))),
        }
    }

    /// Posts with retries. Connection failures, 429 and 5xx are retried; the
    /// same body is re-sent each time.
    fn post(&self, body: &Value) -> Result<String, BackendError> {
        let bearer = self.bearer()?;
        let attempts = self.config.max_retries + 1;
        let mut last: Option<BackendError> = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.config.retry_backoff_ms > 0 {
                let delay = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            match self
                .transport
                .post_json(&self.config.endpoint, body, bearer.as_deref(), self.config.timeout())
            {
                Ok(reply) if (200..300).contains(&reply.status) => return parse_content(&reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    log::warn!("{} attempt {} got status {}", self.config.fingerprint(), attempt + 1, reply.status);
                    last = Some(BackendError::Status {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Ok(reply) => {
                    return Err(BackendError::Status {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(TransportFailure(msg)) => {
                    log::warn!("{} attempt {} failed: {msg}", self.config.fingerprint(), attempt + 1);
                    last = Some(BackendError::Transport {
                        attempts: attempt + 1,
                        message: msg,
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn parse_content(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    value
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("response lacks a string `content` field".into()))
}
