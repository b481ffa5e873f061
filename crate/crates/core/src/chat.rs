//! Minimal blocking client for chat-completions style JSON-over-HTTP servers.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Maximum in-flight requests shared by every user of one client.
    pub max_concurrency: usize,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Ask the server to continue the trailing assistant message instead of
    /// opening a new turn.
    pub continue_final_message: bool,
    pub seed: Option<u64>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: Some("BGMCTS_API_KEY".into()),
            timeout_secs: 120,
            max_concurrency: 8,
            temperature: None,
            max_tokens: None,
            continue_final_message: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.into(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new("system", content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new("user", content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new("assistant", content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub continue_final_message: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub add_generation_prompt: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub choices: Vec<Choice>,
    #[serde(default)]
    pub usage: Option<Usage>,
    /// Scalar reward some reward-model servers attach to the response.
    #[serde(default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Choice {
    pub message: ResponseMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
    /// Matched stop string or stop token id (vLLM). `Some(Null)` when the
    /// field is present but null, `None` when absent.
    #[serde(default, deserialize_with = "present")]
    pub stop_reason: Option<serde_json::Value>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<serde_json::Value>, D::Error> {
    serde_json::Value::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ChatError {
    /// Connection problems, timeouts, rate limits and 5xx are worth retrying.
    pub fn is_retriable(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            ChatError::Malformed(_) => false,
        }
    }
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    limiter: Arc<Limiter>,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ChatError> {
        let api_key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: EndpointConfig, api_key: Option<String>) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let limiter = Arc::new(Limiter::new(config.max_concurrency));
        Ok(ChatClient { config, http, api_key, limiter })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Request skeleton carrying the endpoint's model and sampling defaults.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        let prefill = self.config.continue_final_message && messages.last().is_some_and(|m| m.role == "assistant");
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            stop: Vec::new(),
            seed: self.config.seed,
            continue_final_message: prefill,
            add_generation_prompt: prefill.then_some(false),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let _permit = self.limiter.acquire();
        let mut builder = self.http.post(&self.config.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status { status: status.as_u16(), body });
        }
        serde_json::from_str(&body).map_err(|e| ChatError::Malformed(format!("{e}: {body}")))
    }
}

/// Whitespace token estimate used when the server reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.split_whitespace().count() as u64).max(1)
}
