//! Shared call contexts bundling a backend with prompts and model settings.

use crate::backend::{Backend, BackendError, ChatRequest, Message};
use crate::prompts::PromptSet;

/// Everything a generation stage needs to issue chat calls.
pub struct GenerationContext<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl<'a> GenerationContext<'a> {
    pub fn new(backend: &'a dyn Backend, prompts: &'a PromptSet, model_id: impl Into<String>) -> Self {
        Self {
            backend,
            prompts,
            model_id: model_id.into(),
            temperature: 1.0,
            max_tokens: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            messages,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn chat(&self, messages: Vec<Message>) -> Result<String, BackendError> {
        self.backend.chat(&self.request(messages))
    }
}

/// Settings for evaluation calls (judging, opinion-point extraction,
/// embedding). Defaults to temperature 0 so scores are stable.
pub struct EvalContext<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    pub chat_model_id: String,
    pub embedding_model_id: String,
    pub temperature: f64,
    pub judge_scale: (f64, f64),
}

impl<'a> EvalContext<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        prompts: &'a PromptSet,
        chat_model_id: impl Into<String>,
        embedding_model_id: impl Into<String>,
    ) -> Self {
        Self {
            backend,
            prompts,
            chat_model_id: chat_model_id.into(),
            embedding_model_id: embedding_model_id.into(),
            temperature: 0.0,
            judge_scale: (1.0, 5.0),
        }
    }

    pub fn chat(&self, messages: Vec<Message>) -> Result<String, BackendError> {
        self.backend.chat(&ChatRequest {
            messages,
            model_id: self.chat_model_id.clone(),
            temperature: self.temperature,
            max_tokens: None,
        })
    }
}
