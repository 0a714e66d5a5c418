//! The HTTP backend against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use clinsv_core::backend::{
    Backend, BackendError, CachedBackend, ChatMessage, FinishReason, HttpBackend, HttpConfig, LlmRequest, Prompt, ResponseStore,
    RetryPolicy, Role,
};

struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: serde_json::Value,
}

type Reply = (u16, Vec<(&'static str, &'static str)>, String);

/// Serve one canned `(status, extra headers, body)` per connection, in order.
fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, extra, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers.iter().find(|(k, _)| k == "content-length").map(|(_, v)| v.parse().unwrap()).unwrap_or(0);
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { path, headers, body: serde_json::from_slice(&buf).unwrap_or_default() });

            let mut out = stream;
            let mut head = format!("HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n", body.len());
            for (k, v) in extra {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            out.write_all(format!("{head}\r\n{body}").as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}"), seen)
}

fn chat_ok(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    })
    .to_string()
}

fn config(base: String) -> HttpConfig {
    let mut c = HttpConfig::new(base).with_api_key("sk-test");
    c.timeout = Duration::from_secs(5);
    c.retry = RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) };
    c
}

fn chat_request() -> LlmRequest {
    LlmRequest::new(
        "test-model",
        Prompt::Chat(vec![ChatMessage::new(Role::System, "Be brief."), ChatMessage::new(Role::User, "List the arms.")]),
    )
}

#[test]
fn chat_request_shape_and_auth() {
    let (base, seen) = serve(vec![(200, vec![], chat_ok("- placebo"))]);
    let backend = HttpBackend::new(config(base)).unwrap();
    let r = backend.complete(&chat_request()).unwrap();
    assert_eq!(r.text, "- placebo");
    assert_eq!(r.finish_reason, FinishReason::Stop);
    assert_eq!(r.usage.unwrap().output_tokens, 3);
    assert!(!r.from_cache);

    let seen = seen.lock().unwrap();
    let req = &seen[0];
    assert_eq!(req.path, "/v1/chat/completions");
    assert!(req.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer sk-test"));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["messages"][0]["role"], "system");
    assert_eq!(req.body["messages"][1]["content"], "List the arms.");
    assert_eq!(req.body["max_tokens"], 1024);
}

#[test]
fn completion_mode_uses_completions_path() {
    let body = serde_json::json!({"choices": [{"text": "- aspirin: active", "finish_reason": "length"}]}).to_string();
    let (base, seen) = serve(vec![(200, vec![], body)]);
    let backend = HttpBackend::new(config(base)).unwrap();
    let r = backend.complete(&LlmRequest::new("m", Prompt::Completion("Medications:".into()))).unwrap();
    assert_eq!(r.finish_reason, FinishReason::Length);
    assert_eq!(seen.lock().unwrap()[0].path, "/v1/completions");
    assert_eq!(seen.lock().unwrap()[0].body["prompt"], "Medications:");
}

#[test]
fn retries_rate_limit_and_server_errors() {
    let (base, _) = serve(vec![
        (429, vec![("retry-after", "0")], "{}".into()),
        (503, vec![], r#"{"error":{"message":"overloaded"}}"#.into()),
        (200, vec![], chat_ok("ok")),
    ]);
    let backend = HttpBackend::new(config(base)).unwrap();
    assert_eq!(backend.complete(&chat_request()).unwrap().text, "ok");
    assert_eq!(backend.requests_sent(), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let (base, _) = serve(vec![(500, vec![], "boom".into()), (500, vec![], "boom".into()), (500, vec![], "boom".into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    let err = backend.complete(&chat_request()).unwrap_err();
    assert!(matches!(err, BackendError::Network(ref m) if m.contains("500")), "{err}");
    assert_eq!(backend.requests_sent(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, _) = serve(vec![(401, vec![], r#"{"error":{"message":"bad key"}}"#.into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    let err = backend.complete(&chat_request()).unwrap_err();
    assert_eq!(err, BackendError::Backend { status: 401, message: "bad key".into() });
    assert_eq!(backend.requests_sent(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (base, _) = serve(vec![(200, vec![], r#"{"choices":[]}"#.into())]);
    let backend = HttpBackend::new(config(base)).unwrap();
    assert!(matches!(backend.complete(&chat_request()), Err(BackendError::MalformedResponse(_))));
}

#[test]
fn cache_serves_second_call_without_network() {
    let (base, _) = serve(vec![(200, vec![], chat_ok("- placebo"))]);
    let cached = CachedBackend::new(HttpBackend::new(config(base)).unwrap(), Arc::new(ResponseStore::in_memory()));
    let first = cached.complete(&chat_request()).unwrap();
    let second = cached.complete(&chat_request()).unwrap();
    assert_eq!(first.text, second.text);
    assert!(second.from_cache);
    assert_eq!(cached.inner().requests_sent(), 1);
    let stats = cached.stats();
    assert_eq!((stats.hits, stats.misses, stats.writes), (1, 1, 1));
}

#[test]
fn invalid_request_never_hits_the_network() {
    let backend = HttpBackend::new(config("http://127.0.0.1:9".into())).unwrap();
    let mut req = chat_request();
    req.temperature = 3.0;
    assert!(matches!(backend.complete(&req), Err(BackendError::InvalidRequest(_))));
    assert_eq!(backend.requests_sent(), 0);
}
