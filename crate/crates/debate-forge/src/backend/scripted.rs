//! Deterministic scripted backend for offline tests, fixtures, and demos.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest, EmbedRequest, EmbeddingVector};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Canned chat responses plus a deterministic text-to-vector rule.
///
/// Chat responses come from two sources checked in order: pattern rules
/// (a substring matched against the full request text, reusable) and a
/// one-shot FIFO queue. An exhausted script is an error, never a guess.
pub struct ScriptedBackend {
    rules: Vec<(String, String)>,
    queue: Mutex<VecDeque<String>>,
    embedding_map: HashMap<String, Vec<f64>>,
    embedding_dim: usize,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self {
            rules: Vec::new(),
            queue: Mutex::new(VecDeque::new()),
            embedding_map: HashMap::new(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    /// Queues a one-shot response.
    pub fn push_response(mut self, response: impl Into<String>) -> Self {
        self.queue.get_mut().unwrap().push_back(response.into());
        self
    }

    pub fn with_responses<I, S>(mut self, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.queue
            .get_mut()
            .unwrap()
            .extend(responses.into_iter().map(Into::into));
        self
    }

    /// Adds a reusable rule: any chat request containing `pattern` gets
    /// `response`. Rules are checked in insertion order, first match wins.
    pub fn add_rule(mut self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((pattern.into(), response.into()));
        self
    }

    /// Pins the embedding for an exact input text.
    pub fn map_embedding(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.embedding_map.insert(text.into(), vector);
        self
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim.max(1);
        self
    }

    /// Loads a fixture directory: `chat.jsonl` with rule lines
    /// (`{"match": ..., "response": ...}`) or queue lines
    /// (`{"response": ...}`), and an optional `embeddings.jsonl` with
    /// `{"text": ..., "vector": [...]}` lines.
    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        #[derive(Deserialize)]
        struct ChatLine {
            #[serde(rename = "match")]
            pattern: Option<String>,
            response: String,
        }

        #[derive(Deserialize)]
        struct EmbeddingLine {
            text: String,
            vector: Vec<f64>,
        }

        let mut backend = ScriptedBackend::new();

        let chat_path = dir.join("chat.jsonl");
        if chat_path.exists() {
            let raw = std::fs::read_to_string(&chat_path)?;
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: ChatLine = serde_json::from_str(line).map_err(|e| {
                    BackendError::Fixture(format!(
                        "{} line {}: {e}",
                        chat_path.display(),
                        i + 1
                    ))
                })?;
                backend = match parsed.pattern {
                    Some(pattern) => backend.add_rule(pattern, parsed.response),
                    None => backend.push_response(parsed.response),
                };
            }
        }

        let embeddings_path = dir.join("embeddings.jsonl");
        if embeddings_path.exists() {
            let raw = std::fs::read_to_string(&embeddings_path)?;
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: EmbeddingLine = serde_json::from_str(line).map_err(|e| {
                    BackendError::Fixture(format!(
                        "{} line {}: {e}",
                        embeddings_path.display(),
                        i + 1
                    ))
                })?;
                backend = backend.map_embedding(parsed.text, parsed.vector);
            }
        }

        if !chat_path.exists() && !embeddings_path.exists() {
            return Err(BackendError::Fixture(format!(
                "{} contains neither chat.jsonl nor embeddings.jsonl",
                dir.display()
            )));
        }

        Ok(backend)
    }

    /// Deterministic default rule: hash the token multiset of `text` into a
    /// unit vector. Uses SHA-256 so the result is stable across platforms.
    pub fn default_embedding(text: &str, dim: usize) -> Vec<f64> {
        let mut values = vec![0.0f64; dim.max(1)];
        let mut any = false;
        for token in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_be_bytes(digest[..8].try_into().unwrap()) as usize % values.len();
            values[bucket] += 1.0;
            any = true;
        }
        if !any {
            let digest = Sha256::digest(text.as_bytes());
            let bucket = u64::from_be_bytes(digest[..8].try_into().unwrap()) as usize % values.len();
            values[bucket] = 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        values
    }
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let text = request.full_text();
        for (pattern, response) in &self.rules {
            if text.contains(pattern) {
                return Ok(response.clone());
            }
        }
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::ScriptExhausted)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError> {
        request.validate()?;
        let vectors: Vec<EmbeddingVector> = request
            .texts
            .iter()
            .map(|text| EmbeddingVector {
                values: self
                    .embedding_map
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| Self::default_embedding(text, self.embedding_dim)),
                model_id: request.model_id.clone(),
            })
            .collect();

        for vector in &vectors {
            vector.validate()?;
        }
        if let Some(first) = vectors.first() {
            let dim = first.values.len();
            if vectors.iter().any(|v| v.values.len() != dim) {
                return Err(BackendError::Fixture(
                    "embedding fixture mixes vector lengths".to_string(),
                ));
            }
        }
        Ok(vectors)
    }
}
