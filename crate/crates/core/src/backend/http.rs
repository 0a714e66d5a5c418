//! Blocking client for OpenAI-compatible completion endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, HeaderName, HeaderValue, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, FinishReason, LlmRequest, LlmResponse, Prompt, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Which header carries the API key. `Authorization` gets a `Bearer `
/// prefix; any other header name (e.g. Azure's `api-key`) gets the raw key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthConfig {
    pub header_name: String,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig { header_name: "Authorization".to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub auth: AuthConfig,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: None,
            auth: AuthConfig::default(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn endpoint(&self, path: &str) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/{path}")
        } else {
            format!("{base}/v1/{path}")
        }
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
    /// Shared across workers: no request is sent before this instant.
    cooldown_until: Mutex<Option<Instant>>,
    requests_sent: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let mut headers = HeaderMap::new();
        if let Some(key) = &config.api_key {
            let name = HeaderName::from_bytes(config.auth.header_name.as_bytes())
                .map_err(|e| BackendError::Config(format!("bad auth header name: {e}")))?;
            let value = if name == reqwest::header::AUTHORIZATION { format!("Bearer {key}") } else { key.clone() };
            let mut value = HeaderValue::from_str(&value).map_err(|e| BackendError::Config(format!("bad api key: {e}")))?;
            value.set_sensitive(true);
            headers.insert(name, value);
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .default_headers(headers)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { config, client, cooldown_until: Mutex::new(None), requests_sent: AtomicU64::new(0) })
    }

    /// Number of HTTP requests actually sent, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn wait_for_cooldown(&self) {
        let until = *self.cooldown_until.lock().expect("cooldown lock poisoned");
        if let Some(until) = until {
            let now = Instant::now();
            if until > now {
                std::thread::sleep(until - now);
            }
        }
    }

    fn extend_cooldown(&self, delay: Duration) {
        let mut guard = self.cooldown_until.lock().expect("cooldown lock poisoned");
        let candidate = Instant::now() + delay;
        if guard.is_none_or(|current| candidate > current) {
            *guard = Some(candidate);
        }
    }

    fn send_once(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let (url, body) = build_body(&self.config, request);
        self.requests_sent.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let resp = self.client.post(&url).json(&body).send().map_err(classify_transport)?;
        let status = resp.status();
        let retry_after = parse_retry_after(resp.headers());
        let text = resp.text().map_err(classify_transport)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(BackendError::RateLimited { retry_after });
        }
        if status == StatusCode::REQUEST_TIMEOUT || status == StatusCode::GATEWAY_TIMEOUT {
            return Err(BackendError::Timeout);
        }
        if status.is_server_error() {
            return Err(BackendError::Network(format!("server error {}: {}", status.as_u16(), error_message(&text))));
        }
        if !status.is_success() {
            return Err(BackendError::Backend { status: status.as_u16(), message: error_message(&text) });
        }
        parse_response(&text, latency_ms)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        let policy = &self.config.retry;
        let mut attempt = 1;
        loop {
            self.wait_for_cooldown();
            match self.send_once(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                    let delay = match &e {
                        BackendError::RateLimited { retry_after: Some(d) } => *d,
                        _ => policy.backoff(attempt),
                    };
                    if matches!(e, BackendError::RateLimited { .. }) {
                        self.extend_cooldown(delay);
                    } else {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn identity(&self) -> String {
        format!("http:{}", self.config.base_url)
    }
}

fn build_body(config: &HttpConfig, request: &LlmRequest) -> (String, Value) {
    let mut body = match &request.prompt {
        Prompt::Chat(messages) => {
            let msgs: Vec<Value> = messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect();
            json!({"model": request.model_id, "messages": msgs})
        }
        Prompt::Completion(text) => json!({"model": request.model_id, "prompt": text}),
    };
    body["temperature"] = json!(request.temperature);
    body["max_tokens"] = json!(request.max_output_tokens);
    if !request.stop_sequences.is_empty() {
        body["stop"] = json!(request.stop_sequences);
    }
    let path = match request.prompt {
        Prompt::Chat(_) => "chat/completions",
        Prompt::Completion(_) => "completions",
    };
    (config.endpoint(path), body)
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: Option<ApiMessage>,
    text: Option<String>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
}

fn parse_response(body: &str, latency_ms: u64) -> Result<LlmResponse, BackendError> {
    let api: ApiResponse = serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = api.choices.into_iter().next().ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    let text = choice
        .message
        .and_then(|m| m.content)
        .or(choice.text)
        .ok_or_else(|| BackendError::MalformedResponse("choice has no content".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    Ok(LlmResponse {
        text,
        finish_reason,
        usage: api.usage.map(|u| Usage { prompt_tokens: u.prompt_tokens, output_tokens: u.completion_tokens }),
        latency_ms,
        from_cache: false,
    })
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect())
}

fn parse_retry_after(headers: &HeaderMap) -> Option<Duration> {
    let raw = headers.get(RETRY_AFTER)?.to_str().ok()?.trim();
    let secs: f64 = raw.parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

fn classify_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Network(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, Role};

    #[test]
    fn endpoint_joins_v1_once() {
        assert_eq!(HttpConfig::new("http://h:1").endpoint("completions"), "http://h:1/v1/completions");
        assert_eq!(HttpConfig::new("http://h:1/v1/").endpoint("chat/completions"), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn chat_body_shape() {
        let mut req = LlmRequest::new(
            "gpt-4",
            Prompt::Chat(vec![ChatMessage::new(Role::System, "s"), ChatMessage::new(Role::User, "u")]),
        );
        req.stop_sequences = vec!["END".into()];
        let (url, body) = build_body(&HttpConfig::new("http://x"), &req);
        assert_eq!(url, "http://x/v1/chat/completions");
        assert_eq!(body["messages"][1]["content"], "u");
        assert_eq!(body["temperature"], 0.1);
        assert_eq!(body["max_tokens"], 1024);
        assert_eq!(body["stop"][0], "END");
    }

    #[test]
    fn completion_body_shape() {
        let req = LlmRequest::new("davinci", Prompt::Completion("p".into()));
        let (url, body) = build_body(&HttpConfig::new("http://x"), &req);
        assert_eq!(url, "http://x/v1/completions");
        assert_eq!(body["prompt"], "p");
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn parses_chat_and_completion_payloads() {
        let chat = r#"{"choices":[{"message":{"role":"assistant","content":"- a"},"finish_reason":"stop"}],"usage":{"prompt_tokens":5,"completion_tokens":2,"total_tokens":7}}"#;
        let r = parse_response(chat, 3).unwrap();
        assert_eq!(r.text, "- a");
        assert_eq!(r.usage, Some(Usage { prompt_tokens: 5, output_tokens: 2 }));
        let comp = r#"{"choices":[{"text":"x","finish_reason":"length"}]}"#;
        assert_eq!(parse_response(comp, 0).unwrap().finish_reason, FinishReason::Length);
        assert!(matches!(parse_response("{}", 0), Err(BackendError::MalformedResponse(_))));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(350) };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
        assert_eq!(p.backoff(40), Duration::from_millis(350));
    }
}
