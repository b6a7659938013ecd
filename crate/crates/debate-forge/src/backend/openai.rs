//! HTTP backend speaking the OpenAI-compatible wire protocol.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, ChatRequest, ChatRole, EmbedRequest, EmbeddingVector, Semaphore};

pub const API_KEY_ENV: &str = "DEBATE_FORGE_API_KEY";
pub const BASE_URL_ENV: &str = "DEBATE_FORGE_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: String,
    /// Retries after the first attempt, on timeouts, 429 and 5xx.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry (1s, 2s, 4s by default).
    pub retry_base: Duration,
    pub request_timeout: Duration,
    /// Cap on concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            max_retries: 3,
            retry_base: Duration::from_secs(1),
            request_timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// Builds a config from `DEBATE_FORGE_BASE_URL` / `DEBATE_FORGE_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::MissingApiKey)?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base_url, api_key))
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        if config.api_key.is_empty() {
            return Err(BackendError::MissingApiKey);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let semaphore = Semaphore::new(config.max_in_flight);
        Ok(Self { config, client, semaphore })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{path}", self.config.base_url.trim_end_matches('/'))
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    fn post_json(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let mut attempt = 0u32;
        loop {
            let _permit = self.semaphore.acquire();
            let outcome = self
                .client
                .post(url)
                .header("authorization", format!("Bearer {}", self.config.api_key))
                .json(body)
                .send();
            drop(_permit);

            let retryable_error = match outcome {
                Ok(response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        return response
                            .json::<serde_json::Value>()
                            .map_err(|e| BackendError::MalformedPayload(e.to_string()));
                    }
                    let body = response.text().unwrap_or_default();
                    let error = BackendError::Status { status, body };
                    if status == 429 || status >= 500 {
                        error
                    } else {
                        return Err(error);
                    }
                }
                Err(e) => BackendError::Transport(e.to_string()),
            };

            if attempt >= self.config.max_retries {
                return Err(retryable_error);
            }
            let delay = self.config.retry_base * 2u32.pow(attempt);
            log::warn!("request to {url} failed ({retryable_error}), retrying in {delay:?}");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl Backend for OpenAiBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    ChatRole::System => "system",
                    ChatRole::User => "user",
                    ChatRole::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();

        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }

        let raw = self.post_json(&self.endpoint("/v1/chat/completions"), &body)?;
        let parsed: ChatCompletionResponse = serde_json::from_value(raw)
            .map_err(|e| BackendError::MalformedPayload(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedPayload("no completion choices".to_string()))
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, BackendError> {
        request.validate()?;
        if request.texts.is_empty() {
            return Ok(Vec::new());
        }

        let body = json!({
            "model": request.model_id,
            "input": request.texts,
        });
        let raw = self.post_json(&self.endpoint("/v1/embeddings"), &body)?;
        let parsed: EmbeddingsResponse = serde_json::from_value(raw)
            .map_err(|e| BackendError::MalformedPayload(e.to_string()))?;

        if parsed.data.len() != request.texts.len() {
            return Err(BackendError::MalformedPayload(format!(
                "{} embeddings for {} inputs",
                parsed.data.len(),
                request.texts.len()
            )));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        let vectors: Vec<EmbeddingVector> = data
            .into_iter()
            .map(|d| EmbeddingVector { values: d.embedding, model_id: request.model_id.clone() })
            .collect();
        for vector in &vectors {
            vector.validate()?;
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// One-shot HTTP server answering each connection with the next canned
    /// response, while forwarding the received request bodies.
    fn spawn_server(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();

        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                }
                let mut request_body = vec![0u8; content_length];
                reader.read_exact(&mut request_body).ok();
                tx.send(String::from_utf8_lossy(&request_body).to_string()).ok();

                let reason = if status == 200 { "OK" } else { "ERR" };
                let reply = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let mut stream = reader.into_inner();
                stream.write_all(reply.as_bytes()).ok();
            }
        });

        (format!("http://{addr}"), rx)
    }

    fn test_backend(base_url: &str) -> OpenAiBackend {
        let mut config = OpenAiConfig::new(base_url, "test-key");
        config.retry_base = Duration::from_millis(1);
        config.request_timeout = Duration::from_secs(5);
        OpenAiBackend::new(config).unwrap()
    }

    fn chat_request() -> ChatRequest {
        ChatRequest {
            messages: vec![Message::system("be brief"), Message::user("hi")],
            model_id: "test-model".to_string(),
            temperature: 1.0,
            max_tokens: Some(64),
        }
    }

    #[test]
    fn chat_sends_wire_format_and_parses_content() {
        let completion = json!({
            "choices": [{ "message": { "role": "assistant", "content": "Hello there" } }]
        });
        let (url, rx) = spawn_server(vec![(200, completion.to_string())]);

        let backend = test_backend(&url);
        let reply = backend.chat(&chat_request()).unwrap();
        assert_eq!(reply, "Hello there");

        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["max_tokens"], 64);
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"], "hi");
    }

    #[test]
    fn transient_failure_is_retried() {
        let completion = json!({
            "choices": [{ "message": { "content": "after retry" } }]
        });
        let (url, _rx) = spawn_server(vec![
            (500, "{\"error\": \"boom\"}".to_string()),
            (200, completion.to_string()),
        ]);

        let backend = test_backend(&url);
        assert_eq!(backend.chat(&chat_request()).unwrap(), "after retry");
    }

    #[test]
    fn client_error_is_not_retried() {
        let (url, rx) = spawn_server(vec![
            (400, "{\"error\": \"bad request\"}".to_string()),
            (200, "{}".to_string()),
        ]);

        let backend = test_backend(&url);
        let err = backend.chat(&chat_request()).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 400, .. }));
        // Only one request should have reached the server.
        rx.recv().unwrap();
        assert!(rx.recv_timeout(Duration::from_millis(100)).is_err());
    }

    #[test]
    fn embeddings_are_ordered_by_index() {
        let payload = json!({
            "data": [
                { "index": 1, "embedding": [0.0, 1.0] },
                { "index": 0, "embedding": [1.0, 0.0] }
            ]
        });
        let (url, rx) = spawn_server(vec![(200, payload.to_string())]);

        let backend = test_backend(&url);
        let vectors = backend
            .embed(&EmbedRequest {
                texts: vec!["a".to_string(), "b".to_string()],
                model_id: "embed-model".to_string(),
            })
            .unwrap();
        assert_eq!(vectors[0].values, vec![1.0, 0.0]);
        assert_eq!(vectors[1].values, vec![0.0, 1.0]);

        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "embed-model");
        assert_eq!(sent["input"][0], "a");
    }

    #[test]
    fn malformed_payload_is_reported() {
        let (url, _rx) = spawn_server(vec![(200, "{\"unexpected\": true}".to_string())]);
        let backend = test_backend(&url);
        assert!(matches!(
            backend.chat(&chat_request()),
            Err(BackendError::MalformedPayload(_))
        ));
    }

    #[test]
    fn empty_api_key_is_rejected() {
        match OpenAiBackend::new(OpenAiConfig::new("http://x", "")) {
            Err(BackendError::MissingApiKey) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("expected an error"),
        }
    }
}
