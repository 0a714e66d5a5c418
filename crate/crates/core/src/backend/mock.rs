//! Deterministic mock backends.
//!
//! Script file format, one entry per `>>>` header line:
//!
//! ```text
//! # comments before the first entry are ignored
//! >>> contains: missed && !contains: liver fibrosis
//! - Liver fibrosis
//! >>> regex: (?i)is this .* correct && times: 1
//! No. It was ruled out.
//! >>> any
//! - none
//! ```
//!
//! Header clauses are joined by `&&`: `contains: TEXT`, `!contains: TEXT`,
//! `regex: PATTERN`, `any`, and `times: N` (the entry is used at most N
//! times). The response is every line up to the next header, with trailing
//! blank lines removed. The first entry whose clauses all match the rendered
//! prompt answers; if none matches the call fails with `ScriptExhausted`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use regex::Regex;

use super::{Backend, BackendError, LlmRequest, LlmResponse};

/// Predicate over the flattened prompt text.
#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    NotContains(String),
    Regex(Regex),
    All(Vec<Matcher>),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(s.into())
    }

    pub fn regex(pattern: &str) -> Result<Self, BackendError> {
        Regex::new(pattern)
            .map(Matcher::Regex)
            .map_err(|e| BackendError::Config(format!("bad script regex `{pattern}`: {e}")))
    }

    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::NotContains(s) => !prompt.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(prompt),
            Matcher::All(ms) => ms.iter().all(|m| m.matches(prompt)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub response: String,
    pub max_uses: Option<usize>,
}

impl ScriptEntry {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        ScriptEntry { matcher, response: response.into(), max_uses: None }
    }

    pub fn times(mut self, n: usize) -> Self {
        self.max_uses = Some(n);
        self
    }
}

/// Answers each prompt with the first matching scripted entry.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    uses: Mutex<Vec<usize>>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let uses = Mutex::new(vec![0; entries.len()]);
        ScriptedBackend { entries, uses, calls: AtomicU64::new(0) }
    }

    /// Convenience constructor from `(substring, response)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(pairs.into_iter().map(|(m, r)| ScriptEntry::new(Matcher::contains(m), r)).collect())
    }

    pub fn from_script(text: &str) -> Result<Self, BackendError> {
        Ok(Self::new(parse_script(text)?))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt.text();
        let mut uses = self.uses.lock().expect("script lock poisoned");
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.max_uses.is_some_and(|max| uses[i] >= max) {
                continue;
            }
            if entry.matcher.matches(&prompt) {
                uses[i] += 1;
                return Ok(LlmResponse::stop(entry.response.clone()));
            }
        }
        Err(BackendError::ScriptExhausted)
    }

    fn identity(&self) -> String {
        format!("mock:script({} entries)", self.entries.len())
    }
}

type ResponderFn = dyn Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync;

/// Mock backend driven by a closure over the request.
pub struct FnBackend {
    name: String,
    f: Box<ResponderFn>,
    calls: AtomicU64,
}

impl FnBackend {
    pub fn new(name: impl Into<String>, f: impl Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        FnBackend { name: name.into(), f: Box::new(f), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl std::fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnBackend").field("name", &self.name).finish()
    }
}

impl Backend for FnBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(request).map(LlmResponse::stop)
    }

    fn identity(&self) -> String {
        format!("mock:{}", self.name)
    }
}

/// Parse the script file format described in the module docs.
pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, BackendError> {
    let mut entries = Vec::new();
    let mut current: Option<(Matcher, Option<usize>, Vec<&str>)> = None;
    for (lineno, line) in text.lines().enumerate() {
        if let Some(header) = line.strip_prefix(">>>") {
            if let Some(done) = current.take() {
                entries.push(finish_entry(done));
            }
            let (matcher, times) = parse_header(header.trim()).map_err(|e| BackendError::Config(format!("script line {}: {e}", lineno + 1)))?;
            current = Some((matcher, times, Vec::new()));
        } else if let Some((_, _, body)) = current.as_mut() {
            body.push(line);
        } else if !(line.trim().is_empty() || line.trim_start().starts_with('#')) {
            return Err(BackendError::Config(format!("script line {}: text before first `>>>` entry", lineno + 1)));
        }
    }
    if let Some(done) = current.take() {
        entries.push(finish_entry(done));
    }
    Ok(entries)
}

fn finish_entry((matcher, times, mut body): (Matcher, Option<usize>, Vec<&str>)) -> ScriptEntry {
    while body.last().is_some_and(|l| l.trim().is_empty()) {
        body.pop();
    }
    ScriptEntry { matcher, response: body.join("\n"), max_uses: times }
}

fn parse_header(header: &str) -> Result<(Matcher, Option<usize>), String> {
    let mut clauses = Vec::new();
    let mut times = None;
    for clause in header.split("&&").map(str::trim) {
        if clause == "any" || clause.is_empty() {
            clauses.push(Matcher::Any);
        } else if let Some(rest) = clause.strip_prefix("!contains:") {
            clauses.push(Matcher::NotContains(rest.trim().to_string()));
        } else if let Some(rest) = clause.strip_prefix("contains:") {
            clauses.push(Matcher::Contains(rest.trim().to_string()));
        } else if let Some(rest) = clause.strip_prefix("regex:") {
            clauses.push(Matcher::regex(rest.trim()).map_err(|e| e.to_string())?);
        } else if let Some(rest) = clause.strip_prefix("times:") {
            times = Some(rest.trim().parse::<usize>().map_err(|e| format!("bad times `{}`: {e}", rest.trim()))?);
        } else {
            return Err(format!("unknown clause `{clause}`"));
        }
    }
    let matcher = if clauses.len() == 1 { clauses.pop().unwrap() } else { Matcher::All(clauses) };
    Ok((matcher, times))
}
