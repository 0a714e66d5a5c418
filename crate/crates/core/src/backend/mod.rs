//! LLM client abstraction.
//!
//! Every pipeline step goes through [`Backend::complete`]. Implementations:
//!
//! - [`HttpBackend`]: OpenAI-compatible `/v1/chat/completions` and
//!   `/v1/completions` endpoints with retry and shared rate-limit backoff.
//! - [`ScriptedBackend`] and [`FnBackend`]: deterministic mocks for tests and
//!   offline runs.
//! - [`CachedBackend`], [`RecordBackend`], [`ReplayBackend`]: wrappers over a
//!   persistent [`ResponseStore`].

mod cache;
mod http;
mod key;
mod mock;
mod store;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheStats, CachedBackend, RecordBackend, ReplayBackend};
pub use http::{AuthConfig, HttpBackend, HttpConfig, RetryPolicy};
pub use key::CacheKey;
pub use mock::{parse_script, FnBackend, Matcher, ScriptEntry, ScriptedBackend};
pub use store::{read_records, write_store, ResponseStore, StoreRecord, StoredResponse, STORE_MAGIC, STORE_VERSION};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS_EXTRACT: u32 = 1024;
pub const DEFAULT_MAX_TOKENS_VERDICT: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Chat,
    Completion,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chat" => Ok(Mode::Chat),
            "completion" | "completions" => Ok(Mode::Completion),
            other => Err(format!("unknown mode `{other}` (expected chat or completion)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
}

/// Rendered prompt: a single string for completion endpoints, an ordered
/// message list for chat endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prompt {
    Completion(String),
    Chat(Vec<ChatMessage>),
}

impl Prompt {
    pub fn mode(&self) -> Mode {
        match self {
            Prompt::Completion(_) => Mode::Completion,
            Prompt::Chat(_) => Mode::Chat,
        }
    }

    /// Flattened text, used by mock matchers.
    pub fn text(&self) -> String {
        match self {
            Prompt::Completion(s) => s.clone(),
            Prompt::Chat(messages) => messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub prompt: Prompt,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl LlmRequest {
    pub fn new(model_id: impl Into<String>, prompt: Prompt) -> Self {
        LlmRequest {
            model_id: model_id.into(),
            prompt,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_TOKENS_EXTRACT,
            stop_sequences: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.prompt.mode()
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::for_request(self)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    /// Raw completion text, unmodified.
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    #[serde(default)]
    pub from_cache: bool,
}

impl LlmResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        LlmResponse { text: text.into(), finish_reason: FinishReason::Stop, usage: None, latency_ms: 0, from_cache: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited{}", .retry_after.map(|d| format!(" (retry after {}ms)", d.as_millis())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend rejected request (status {status}): {message}")]
    Backend { status: u16, message: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response matches the prompt")]
    ScriptExhausted,
    #[error("replay store has no response for key {0}")]
    ReplayMiss(CacheKey),
    #[error("store corrupt at byte offset {offset}: {reason}")]
    StoreCorrupt { offset: u64, reason: String },
    #[error("store i/o error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Network(_) | BackendError::RateLimited { .. } | BackendError::Timeout)
    }
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Io(e.to_string())
    }
}

/// A language model endpoint. Handles are shared across worker threads.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;

    /// Short description recorded in run manifests.
    fn identity(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Chat => "chat",
            Mode::Completion => "completion",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults() {
        let req = LlmRequest::new("m", Prompt::Completion("hi".into()));
        assert_eq!(req.temperature, 0.1);
        assert_eq!(req.max_output_tokens, 1024);
        assert_eq!(req.mode(), Mode::Completion);
        req.validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut req = LlmRequest::new("m", Prompt::Completion("hi".into()));
        req.temperature = 2.5;
        assert!(matches!(req.validate(), Err(BackendError::InvalidRequest(_))));
        req.temperature = 0.0;
        req.max_output_tokens = 0;
        assert!(req.validate().is_err());
    }

    #[test]
    fn chat_prompt_text_joins_messages() {
        let p = Prompt::Chat(vec![ChatMessage::new(Role::System, "sys"), ChatMessage::new(Role::User, "usr")]);
        assert_eq!(p.text(), "sys\n\nusr");
        assert_eq!(p.mode(), Mode::Chat);
    }
}
