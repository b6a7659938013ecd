//! Uniform interface to chat-completion and embedding providers.
//!
//! Three implementations: [`ScriptedBackend`] for deterministic offline runs,
//! [`OpenAiBackend`] for any OpenAI-compatible endpoint, and [`CachedBackend`]
//! wrapping either with a persistent on-disk request cache.

mod cache;
mod openai;
mod scripted;

pub use cache::{CacheOp, CachePolicy, CachedBackend};
pub use openai::{OpenAiBackend, OpenAiConfig, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
pub use scripted::ScriptedBackend;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scripted backend: script exhausted")]
    ScriptExhausted,
    #[error("cache miss in replay mode (key {0})")]
    ReplayMiss(String),
    #[error("cache entry corrupt: {0}")]
    CacheCorrupt(String),
    #[error("missing API key (set DEBATE_FORGE_API_KEY)")]
    MissingApiKey,
    #[error("request failed: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture error: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: ChatRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub model_id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("messages empty".to_string()));
        }
        match self.messages.last().map(|m| m.role) {
            Some(ChatRole::User) | Some(ChatRole::Assistant) => {}
            _ => {
                return Err(BackendError::InvalidRequest(
                    "last message must be user or assistant".to_string(),
                ))
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be a finite non-negative real".to_string(),
            ));
        }
        Ok(())
    }

    /// All message contents concatenated, used for pattern-matched scripts.
    pub fn full_text(&self) -> String {
        let mut text = String::new();
        for message in &self.messages {
            text.push_str(&message.content);
            text.push('\n');
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub model_id: String,
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.texts.iter().any(|t| t.is_empty()) {
            return Err(BackendError::InvalidRequest("empty input text".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.values.is_empty() {
            return Err(BackendError::MalformedPayload(
                "embedding vector empty".to_string(),
            ));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::MalformedPayload(
                "embedding vector has non-finite values".to_string(),
            ));
        }
        Ok(())
    }
}

/// A chat-completion and embedding provider. Implementations must be safe
/// to share across threads.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(request)
    }
}

/// Counting semaphore capping in-flight provider requests.
pub struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

/// Wrapper that records every request passing through, for tests and
/// prompt debugging.
pub struct RecordingBackend<B> {
    inner: B,
    chat_requests: Mutex<Vec<ChatRequest>>,
    embed_requests: Mutex<Vec<EmbedRequest>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            chat_requests: Mutex::new(Vec::new()),
            embed_requests: Mutex::new(Vec::new()),
        }
    }

    pub fn chat_requests(&self) -> Vec<ChatRequest> {
        self.chat_requests.lock().unwrap().clone()
    }

    pub fn embed_requests(&self) -> Vec<EmbedRequest> {
        self.embed_requests.lock().unwrap().clone()
    }

    pub fn chat_count(&self) -> usize {
        self.chat_requests.lock().unwrap().len()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.chat_requests.lock().unwrap().push(request.clone());
        self.inner.chat(request)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.embed_requests.lock().unwrap().push(request.clone());
        self.inner.embed(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn chat_request_rejects_empty_messages() {
        let request = ChatRequest {
            messages: vec![],
            model_id: "m".to_string(),
            temperature: 1.0,
            max_tokens: None,
        };
        assert!(matches!(request.validate(), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn chat_request_rejects_system_last() {
        let request = ChatRequest {
            messages: vec![Message::system("s")],
            model_id: "m".to_string(),
            temperature: 1.0,
            max_tokens: None,
        };
        assert!(request.validate().is_err());
    }

    #[test]
    fn semaphore_caps_concurrency() {
        let semaphore = Arc::new(Semaphore::new(2));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));

        std::thread::scope(|scope| {
            for _ in 0..8 {
                let semaphore = Arc::clone(&semaphore);
                let in_flight = Arc::clone(&in_flight);
                let peak = Arc::clone(&peak);
                scope.spawn(move || {
                    let _guard = semaphore.acquire();
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });

        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
