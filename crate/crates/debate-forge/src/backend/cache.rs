//! Persistent request cache wrapping any backend.
//!
//! Entries are keyed by a SHA-256 digest of (operation kind, model id, full
//! request content, temperature) and stored one file per entry under
//! `cache/<digest-prefix>/<digest>.json`. Writes are atomic
//! (write-temp-then-rename) so concurrent writers never corrupt entries.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest, EmbedRequest, EmbeddingVector, Message};
use crate::types::now_utc;

/// Per-operation caching behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOp {
    /// No caching, calls pass straight through.
    Bypass,
    /// Serve hits from disk, record misses.
    Memoize,
    /// Serve hits from disk, error on a miss.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachePolicy {
    pub chat: CacheOp,
    pub embed: CacheOp,
}

impl CachePolicy {
    /// Memoize everything.
    pub fn memoize() -> Self {
        Self { chat: CacheOp::Memoize, embed: CacheOp::Memoize }
    }

    /// Strict replay: any unseen request is an error.
    pub fn replay() -> Self {
        Self { chat: CacheOp::Replay, embed: CacheOp::Replay }
    }

    /// Cache embeddings only; chat calls stay live so sampled generations
    /// keep their diversity.
    pub fn embeddings_only() -> Self {
        Self { chat: CacheOp::Bypass, embed: CacheOp::Memoize }
    }
}

#[derive(Serialize)]
struct ChatKey<'a> {
    kind: &'static str,
    model_id: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Serialize)]
struct EmbedKey<'a> {
    kind: &'static str,
    model_id: &'a str,
    texts: &'a [String],
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request_digest: String,
    kind: String,
    response: Value,
    timestamp: String,
}

/// Cache wrapper; never alters a response's content, only its source.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    policy: CachePolicy,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>, policy: CachePolicy) -> Self {
        Self { inner, dir: dir.into(), policy }
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{digest}.json"))
    }

    fn load(&self, digest: &str, kind: &str) -> Result<Option<Value>, BackendError> {
        let path = self.entry_path(digest);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path)?;
        let entry: CacheEntry = serde_json::from_str(&raw)
            .map_err(|e| BackendError::CacheCorrupt(format!("{}: {e}", path.display())))?;
        if entry.request_digest != digest || entry.kind != kind {
            return Err(BackendError::CacheCorrupt(format!(
                "{}: stored digest does not match key",
                path.display()
            )));
        }
        Ok(Some(entry.response))
    }

    fn save(&self, digest: &str, kind: &str, response: Value) -> Result<(), BackendError> {
        let path = self.entry_path(digest);
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent)?;

        let entry = CacheEntry {
            request_digest: digest.to_string(),
            kind: kind.to_string(),
            response,
            timestamp: now_utc().to_rfc3339(),
        };
        let body = serde_json::to_string(&entry)
            .map_err(|e| BackendError::MalformedPayload(e.to_string()))?;

        let tmp = parent.join(format!(
            ".{digest}.{}.tmp",
            std::process::id()
        ));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn digest_of<K: Serialize>(key: &K) -> String {
    let encoded = serde_json::to_vec(key).expect("cache key serializes");
    hex::encode(Sha256::digest(&encoded))
}

pub fn chat_digest(request: &ChatRequest) -> String {
    digest_of(&ChatKey {
        kind: "chat",
        model_id: &request.model_id,
        messages: &request.messages,
        temperature: request.temperature,
    })
}

pub fn embed_digest(request: &EmbedRequest) -> String {
    digest_of(&EmbedKey {
        kind: "embed",
        model_id: &request.model_id,
        texts: &request.texts,
    })
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if self.policy.chat == CacheOp::Bypass {
            return self.inner.chat(request);
        }
        request.validate()?;
        let digest = chat_digest(request);
        if let Some(value) = self.load(&digest, "chat")? {
            let text = value
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::CacheCorrupt(format!("{digest}: no text field")))?;
            return Ok(text.to_string());
        }
        if self.policy.chat == CacheOp::Replay {
            return Err(BackendError::ReplayMiss(digest));
        }
        let response = self.inner.chat(request)?;
        self.save(&digest, "chat", serde_json::json!({ "text": response }))?;
        Ok(response)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError> {
        if self.policy.embed == CacheOp::Bypass {
            return self.inner.embed(request);
        }
        request.validate()?;
        let digest = embed_digest(request);
        if let Some(value) = self.load(&digest, "embed")? {
            let vectors: Vec<Vec<f64>> = serde_json::from_value(
                value
                    .get("vectors")
                    .cloned()
                    .ok_or_else(|| BackendError::CacheCorrupt(format!("{digest}: no vectors field")))?,
            )
            .map_err(|e| BackendError::CacheCorrupt(format!("{digest}: {e}")))?;
            return Ok(vectors
                .into_iter()
                .map(|values| EmbeddingVector { values, model_id: request.model_id.clone() })
                .collect());
        }
        if self.policy.embed == CacheOp::Replay {
            return Err(BackendError::ReplayMiss(digest));
        }
        let vectors = self.inner.embed(request)?;
        let raw: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
        self.save(&digest, "embed", serde_json::json!({ "vectors": raw }))?;
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{RecordingBackend, ScriptedBackend};

    fn request(content: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            messages: vec![Message::user(content)],
            model_id: "m".to_string(),
            temperature,
            max_tokens: None,
        }
    }

    #[test]
    fn second_identical_chat_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let inner = RecordingBackend::new(ScriptedBackend::new().add_rule("hi", "Hello"));
        let cached = CachedBackend::new(inner, dir.path(), CachePolicy::memoize());

        assert_eq!(cached.chat(&request("hi", 1.0)).unwrap(), "Hello");
        assert_eq!(cached.chat(&request("hi", 1.0)).unwrap(), "Hello");
        assert_eq!(cached.inner.chat_count(), 1);
    }

    #[test]
    fn replay_mode_errors_on_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(ScriptedBackend::new(), dir.path(), CachePolicy::replay());
        assert!(matches!(
            cached.chat(&request("unseen", 1.0)),
            Err(BackendError::ReplayMiss(_))
        ));
    }

    #[test]
    fn temperature_distinguishes_cache_entries() {
        let dir = tempfile::tempdir().unwrap();
        let inner = RecordingBackend::new(
            ScriptedBackend::new().with_responses(["first", "second"]),
        );
        let cached = CachedBackend::new(inner, dir.path(), CachePolicy::memoize());

        assert_eq!(cached.chat(&request("hi", 1.0)).unwrap(), "first");
        assert_eq!(cached.chat(&request("hi", 0.5)).unwrap(), "second");
        assert_eq!(cached.inner.chat_count(), 2);
    }

    #[test]
    fn cached_embed_round_trips_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::new().map_embedding("a", vec![0.25, -0.5]);
        let cached = CachedBackend::new(inner, dir.path(), CachePolicy::memoize());

        let req = EmbedRequest { texts: vec!["a".to_string()], model_id: "e".to_string() };
        let live = cached.embed(&req).unwrap();
        let replayed = cached.embed(&req).unwrap();
        assert_eq!(live, replayed);
        assert_eq!(replayed[0].values, vec![0.25, -0.5]);
    }

    #[test]
    fn corrupt_entry_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::new().add_rule("hi", "Hello");
        let cached = CachedBackend::new(inner, dir.path(), CachePolicy::memoize());

        let req = request("hi", 1.0);
        cached.chat(&req).unwrap();

        // Overwrite the stored entry with one carrying a different digest.
        let digest = chat_digest(&req);
        let path = dir.path().join(&digest[..2]).join(format!("{digest}.json"));
        let mut entry: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        entry["request_digest"] = serde_json::json!("0000");
        std::fs::write(&path, entry.to_string()).unwrap();

        assert!(matches!(cached.chat(&req), Err(BackendError::CacheCorrupt(_))));
    }

    #[test]
    fn embeddings_only_policy_leaves_chat_live() {
        let dir = tempfile::tempdir().unwrap();
        let inner = RecordingBackend::new(
            ScriptedBackend::new().with_responses(["one", "two"]),
        );
        let cached = CachedBackend::new(inner, dir.path(), CachePolicy::embeddings_only());

        assert_eq!(cached.chat(&request("hi", 1.0)).unwrap(), "one");
        assert_eq!(cached.chat(&request("hi", 1.0)).unwrap(), "two");
        assert_eq!(cached.inner.chat_count(), 2);
    }
}
