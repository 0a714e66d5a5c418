use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, LlmRequest, LlmResponse, ResponseStore, StoredResponse};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub writes: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    writes: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            writes: self.writes.load(Ordering::SeqCst),
        }
    }
}

/// Serves stored responses when present; otherwise calls through and stores
/// the result.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    store: Arc<ResponseStore>,
    counters: Counters,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, store: Arc<ResponseStore>) -> Self {
        CachedBackend { inner, store, counters: Counters::default() }
    }

    pub fn stats(&self) -> CacheStats {
        self.counters.snapshot()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn store(&self) -> &ResponseStore {
        &self.store
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        let key = request.cache_key();
        if let Some(hit) = self.store.get(&key) {
            self.counters.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit.to_response(true));
        }
        self.counters.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        if self.store.put(key, StoredResponse::from_response(&response))? {
            self.counters.writes.fetch_add(1, Ordering::SeqCst);
        }
        Ok(response)
    }

    fn identity(&self) -> String {
        format!("cached({})", self.inner.identity())
    }
}

/// Always calls through and appends each response to the store.
#[derive(Debug)]
pub struct RecordBackend<B> {
    inner: B,
    store: Arc<ResponseStore>,
}

impl<B: Backend> RecordBackend<B> {
    pub fn new(inner: B, store: Arc<ResponseStore>) -> Self {
        RecordBackend { inner, store }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for RecordBackend<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let response = self.inner.complete(request)?;
        self.store.put(request.cache_key(), StoredResponse::from_response(&response))?;
        Ok(response)
    }

    fn identity(&self) -> String {
        format!("record({})", self.inner.identity())
    }
}

/// Serves exclusively from a recorded store.
#[derive(Debug)]
pub struct ReplayBackend {
    store: Arc<ResponseStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<ResponseStore>) -> Self {
        ReplayBackend { store }
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, BackendError> {
        Ok(ReplayBackend { store: Arc::new(ResponseStore::open_existing(path)?) })
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        let key = request.cache_key();
        self.store.get(&key).map(|r| r.to_response(true)).ok_or(BackendError::ReplayMiss(key))
    }

    fn identity(&self) -> String {
        match self.store.path() {
            Some(p) => format!("replay:{}", p.display()),
            None => "replay:memory".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FnBackend, Prompt, ScriptedBackend};

    fn req(prompt: &str) -> LlmRequest {
        LlmRequest::new("mock", Prompt::Completion(prompt.into()))
    }

    #[test]
    fn second_identical_request_is_cached() {
        let store = Arc::new(ResponseStore::in_memory());
        let backend = CachedBackend::new(ScriptedBackend::from_pairs([("", "- aspirin")]), store);
        let first = backend.complete(&req("p")).unwrap();
        let second = backend.complete(&req("p")).unwrap();
        assert!(!first.from_cache);
        assert!(second.from_cache);
        assert_eq!(first.text.as_bytes(), second.text.as_bytes());
        assert_eq!(backend.inner().calls(), 1);
        assert_eq!(backend.stats(), CacheStats { hits: 1, misses: 1, writes: 1 });
    }

    #[test]
    fn failures_are_not_cached() {
        let store = Arc::new(ResponseStore::in_memory());
        let backend = CachedBackend::new(ScriptedBackend::new(vec![]), store.clone());
        assert!(backend.complete(&req("p")).is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn record_then_replay_makes_no_inner_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.bin");
        let recorder = RecordBackend::new(
            FnBackend::new("upper", |r| Ok(r.prompt.text().to_uppercase())),
            Arc::new(ResponseStore::open(&path).unwrap()),
        );
        let a = recorder.complete(&req("alpha")).unwrap();
        let b = recorder.complete(&req("beta")).unwrap();
        assert_eq!(recorder.inner().calls(), 2);
        drop(recorder);

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.complete(&req("alpha")).unwrap().text, a.text);
        assert_eq!(replay.complete(&req("beta")).unwrap().text, b.text);
        assert!(matches!(replay.complete(&req("alpha!")), Err(BackendError::ReplayMiss(_))));
    }

    #[test]
    fn corrupt_store_fails_replay_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.bin");
        std::fs::write(&path, b"CLSVSTOR\x01\x00\x05\x00").unwrap();
        assert!(matches!(ReplayBackend::open(&path), Err(BackendError::StoreCorrupt { .. })));
    }
}
