//! Content-addressed response cache.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::BackendError;

/// SHA-256 digest identifying one backend request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Serializes JSON with object keys sorted and no insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

fn update_framed(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_be_bytes());
    hasher.update(bytes);
}

/// Digest of fingerprint, canonical payload and (when present) the image hash.
/// Each part is length-framed so that no two distinct inputs share an encoding.
pub fn make_cache_key(fingerprint: &str, payload: &Value, image_hash: Option<&str>) -> CacheKey {
    let mut hasher = Sha256::new();
    update_framed(&mut hasher, fingerprint.as_bytes());
    update_framed(&mut hasher, canonical_json(payload).as_bytes());
    match image_hash {
        Some(h) => {
            hasher.update([1u8]);
            update_framed(&mut hasher, h.as_bytes());
        }
        None => hasher.update([0u8]),
    }
    CacheKey(hasher.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub created_at: DateTime<Utc>,
    pub backend_fingerprint: String,
}

pub enum ResponseCache {
    Memory(RwLock<HashMap<CacheKey, CacheEntry>>),
    /// One JSON file per key under `<dir>/<first two hex chars>/`.
    Disk(PathBuf),
}

impl ResponseCache {
    pub fn memory() -> ResponseCache {
        ResponseCache::Memory(RwLock::new(HashMap::new()))
    }

    pub fn disk(dir: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache::Disk(dir.into())
    }

    fn entry_path(dir: &Path, key: &CacheKey) -> PathBuf {
        let hex = key.to_hex();
        dir.join(&hex[..2]).join(format!("{hex}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        match self {
            ResponseCache::Memory(map) => map.read().expect("cache lock").get(key).cloned(),
            ResponseCache::Disk(dir) => {
                let bytes = std::fs::read(Self::entry_path(dir, key)).ok()?;
                match serde_json::from_slice::<CacheEntry>(&bytes) {
                    Ok(entry) if entry.key == key.to_hex() => Some(entry),
                    _ => {
                        log::warn!("ignoring corrupt cache entry {key}");
                        None
                    }
                }
            }
        }
    }

    /// Stores an entry. Disk writes go through a temp file and a rename, so
    /// readers never see partial entries; concurrent writers of one key race
    /// harmlessly since they carry the same response.
    pub fn put(&self, key: &CacheKey, entry: CacheEntry) -> Result<(), BackendError> {
        match self {
            ResponseCache::Memory(map) => {
                map.write().expect("cache lock").insert(*key, entry);
                Ok(())
            }
            ResponseCache::Disk(dir) => {
                let path = Self::entry_path(dir, key);
                let parent = path.parent().expect("entry path has a parent");
                let io_err = |source| BackendError::Cache {
                    path: path.clone(),
                    source,
                };
                std::fs::create_dir_all(parent).map_err(io_err)?;
                let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err)?;
                let body = serde_json::to_vec_pretty(&entry).expect("entry serializes");
                tmp.write_all(&body).map_err(io_err)?;
                tmp.persist(&path).map_err(|e| io_err(e.error))?;
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn canonical_sorts_keys() {
        let a = json!({"b": 1, "a": {"d": [1, 2], "c": "x y"}});
        assert_eq!(canonical_json(&a), r#"{"a":{"c":"x y","d":[1,2]},"b":1}"#);
    }

    #[test]
    fn key_is_deterministic_and_separates_images() {
        let p = json!({"model": "m", "statement": "There is a car."});
        let k1 = make_cache_key("VisualEntailment:m", &p, Some("aa"));
        let k2 = make_cache_key("VisualEntailment:m", &p, Some("aa"));
        assert_eq!(k1, k2);
        assert_ne!(k1, make_cache_key("VisualEntailment:m", &p, Some("ab")));
        assert_ne!(k1, make_cache_key("VisualEntailment:m", &p, None));
        assert_ne!(k1, make_cache_key("VisualEntailment:n", &p, Some("aa")));
    }

    #[test]
    fn key_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"x": 1, "y": 2}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{ "y":2,"x":1 }"#).unwrap();
        assert_eq!(make_cache_key("f", &a, None), make_cache_key("f", &b, None));
    }

    proptest! {
        #[test]
        fn one_char_difference_changes_key(s in ".{0,40}", pos in 0usize..41, c in any::<char>()) {
            let chars: Vec<char> = s.chars().collect();
            let pos = pos.min(chars.len());
            let mut other = chars.clone();
            if pos < other.len() {
                prop_assume!(other[pos] != c);
                other[pos] = c;
            } else {
                other.push(c);
            }
            let other: String = other.into_iter().collect();
            let a = make_cache_key("f", &json!({"prompt": s}), None);
            let b = make_cache_key("f", &json!({"prompt": other}), None);
            prop_assert_ne!(a, b);
        }
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::disk(dir.path());
        let key = make_cache_key("f", &json!({"p": 1}), None);
        assert!(cache.get(&key).is_none());
        let entry = CacheEntry {
            key: key.to_hex(),
            response: "yes".into(),
            created_at: Utc::now(),
            backend_fingerprint: "f".into(),
        };
        cache.put(&key, entry.clone()).unwrap();
        assert_eq!(cache.get(&key).unwrap(), entry);
        cache.put(&key, entry.clone()).unwrap();
        assert_eq!(cache.get(&key).unwrap().response, "yes");
    }
}
