use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use clinsv_core::backend::{
    AuthConfig, Backend, CacheStats, CachedBackend, HttpBackend, HttpConfig, RecordBackend, ReplayBackend, ResponseStore, ScriptedBackend,
};

use crate::exit::{fail, Classify, CliResult, Exit};
use crate::settings::{BackendKind, Settings};

/// The backend for a run. Caching runs keep a handle for hit statistics.
pub enum Built {
    Plain(Box<dyn Backend>),
    Cached(CachedBackend<Box<dyn Backend>>),
}

impl Built {
    pub fn backend(&self) -> &dyn Backend {
        match self {
            Built::Plain(b) => b.as_ref(),
            Built::Cached(b) => b,
        }
    }

    /// Save hit statistics next to the store for `cache stats`.
    pub fn save_stats(&self) -> CliResult {
        if let Built::Cached(c) = self {
            if let Some(path) = c.store().path() {
                let stats = LastRunStats { stats: c.stats() };
                let json = serde_json::to_string_pretty(&stats).context("serializing cache stats")?;
                std::fs::write(stats_path(path), json).with_context(|| format!("writing stats for {}", path.display()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LastRunStats {
    pub stats: CacheStats,
}

pub fn stats_path(store: &Path) -> PathBuf {
    let mut name = store.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    store.with_file_name(name)
}

fn scripted(path: &Path) -> CliResult<Box<dyn Backend>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display())).or_exit(Exit::Config)?;
    let backend = ScriptedBackend::from_script(&text).with_context(|| format!("parsing script {}", path.display())).or_exit(Exit::Config)?;
    Ok(Box::new(backend))
}

fn http(s: &Settings) -> CliResult<Box<dyn Backend>> {
    let Some(base) = &s.http.api_base else {
        return fail(Exit::Config, "the http backend needs --api-base (or CLINSV_API_BASE)");
    };
    let mut cfg = HttpConfig::new(base.clone());
    cfg.timeout = s.http.timeout;
    if let Some(n) = s.http.max_attempts {
        cfg.retry.max_attempts = n.max(1);
    }
    if let Some(h) = &s.http.auth_header {
        cfg.auth = AuthConfig { header_name: h.clone() };
    }
    if let Ok(key) = std::env::var(&s.http.api_key_env) {
        cfg = cfg.with_api_key(key);
    }
    Ok(Box::new(HttpBackend::new(cfg).or_exit(Exit::Config)?))
}

fn open_store(path: &Path) -> CliResult<Arc<ResponseStore>> {
    Ok(Arc::new(ResponseStore::open(path).with_context(|| format!("opening store {}", path.display())).or_exit(Exit::Backend)?))
}

pub fn build(s: &Settings) -> CliResult<Built> {
    let needs_cache = |what: &str| fail(Exit::Config, format!("the {what} backend needs --cache <store>"));
    Ok(match s.backend {
        BackendKind::Replay => {
            let Some(path) = &s.cache else { return needs_cache("replay") };
            let b = ReplayBackend::open(path).with_context(|| format!("opening store {}", path.display())).or_exit(Exit::Backend)?;
            Built::Plain(Box::new(b))
        }
        BackendKind::Record => {
            let Some(path) = &s.cache else { return needs_cache("record") };
            let inner = match &s.script {
                Some(p) => scripted(p)?,
                None => http(s)?,
            };
            Built::Plain(Box::new(RecordBackend::new(inner, open_store(path)?)))
        }
        BackendKind::Mock | BackendKind::Http => {
            let inner = match (s.backend, &s.script) {
                (BackendKind::Mock, Some(p)) => scripted(p)?,
                (BackendKind::Mock, None) => return fail(Exit::Config, "the mock backend needs --script"),
                _ => http(s)?,
            };
            match &s.cache {
                Some(path) => Built::Cached(CachedBackend::new(inner, open_store(path)?)),
                None => Built::Plain(inner),
            }
        }
    })
}
