//! Append-only response store backing the cache and record/replay modes.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! header   := magic[8] = "CLSVSTOR" | version: u16 = 1
//! record   := payload_len: u32 | payload[payload_len] | checksum: u32
//! payload  := digest[32] | timestamp_ms: u64 | latency_ms: u64
//!             | finish_reason: u8 (0 stop, 1 length, 2 error)
//!             | has_usage: u8 | prompt_tokens: u32 | output_tokens: u32
//!             | text_len: u32 | text[text_len] (UTF-8)
//! checksum := first four bytes of SHA-256(payload), read as u32
//! ```
//!
//! Records are only ever appended. A key is written at most once; on load
//! the first record for a key wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use super::{BackendError, CacheKey, FinishReason, LlmResponse, Usage};

pub const STORE_MAGIC: &[u8; 8] = b"CLSVSTOR";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 10;
const FIXED_PAYLOAD_LEN: usize = 32 + 8 + 8 + 1 + 1 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    pub timestamp_ms: u64,
}

impl StoredResponse {
    pub fn from_response(response: &LlmResponse) -> Self {
        StoredResponse {
            text: response.text.clone(),
            finish_reason: response.finish_reason,
            usage: response.usage,
            latency_ms: response.latency_ms,
            timestamp_ms: now_ms(),
        }
    }

    pub fn to_response(&self, from_cache: bool) -> LlmResponse {
        LlmResponse {
            text: self.text.clone(),
            finish_reason: self.finish_reason,
            usage: self.usage,
            latency_ms: self.latency_ms,
            from_cache,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub key: CacheKey,
    pub response: StoredResponse,
}

/// File-backed map from [`CacheKey`] to response, safe to share across
/// threads: concurrent readers, serialized writers.
#[derive(Debug)]
pub struct ResponseStore {
    path: Option<PathBuf>,
    index: RwLock<HashMap<CacheKey, StoredResponse>>,
    writer: Mutex<Option<File>>,
}

impl ResponseStore {
    /// Store that lives only in memory.
    pub fn in_memory() -> Self {
        ResponseStore { path: None, index: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Open a store for appending, creating it if missing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        if !path.exists() {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut f = File::create(path)?;
            f.write_all(&header())?;
            f.sync_all()?;
        }
        Self::load(path, true)
    }

    /// Open an existing store without write access.
    pub fn open_existing(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(BackendError::Io(format!("store {} does not exist", path.display())));
        }
        Self::load(path, false)
    }

    fn load(path: &Path, writable: bool) -> Result<Self, BackendError> {
        let records = read_records(path)?;
        let mut index = HashMap::with_capacity(records.len());
        for r in records {
            index.entry(r.key).or_insert(r.response);
        }
        let writer = if writable { Some(OpenOptions::new().append(true).open(path)?) } else { None };
        Ok(ResponseStore { path: Some(path.to_path_buf()), index: RwLock::new(index), writer: Mutex::new(writer) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<StoredResponse> {
        self.index.read().expect("store lock poisoned").get(key).cloned()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.read().expect("store lock poisoned").contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append a response unless the key is already stored. Returns whether a
    /// record was written.
    pub fn put(&self, key: CacheKey, response: StoredResponse) -> Result<bool, BackendError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        if self.contains(&key) {
            return Ok(false);
        }
        if let Some(file) = writer.as_mut() {
            file.write_all(&encode_record(&key, &response))?;
            file.flush()?;
        } else if self.path.is_some() {
            return Err(BackendError::Io("store opened read-only".into()));
        }
        self.index.write().expect("store lock poisoned").insert(key, response);
        Ok(true)
    }

    /// All records, sorted by key for stable output.
    pub fn records(&self) -> Vec<StoreRecord> {
        let index = self.index.read().expect("store lock poisoned");
        let mut out: Vec<StoreRecord> =
            index.iter().map(|(k, v)| StoreRecord { key: *k, response: v.clone() }).collect();
        out.sort_by_key(|r| r.key);
        out
    }
}

/// Write a fresh store containing exactly `records` (first occurrence per
/// key wins).
pub fn write_store(path: impl AsRef<Path>, records: &[StoreRecord]) -> Result<usize, BackendError> {
    let mut seen = std::collections::HashSet::new();
    let mut buf = header().to_vec();
    for r in records {
        if seen.insert(r.key) {
            buf.extend_from_slice(&encode_record(&r.key, &r.response));
        }
    }
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(seen.len())
}

/// Parse every record of a store file.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<StoreRecord>, BackendError> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    decode_store(&bytes)
}

pub fn decode_store(bytes: &[u8]) -> Result<Vec<StoreRecord>, BackendError> {
    let corrupt = |offset: usize, reason: &str| BackendError::StoreCorrupt { offset: offset as u64, reason: reason.to_string() };
    if bytes.len() < HEADER_LEN || &bytes[..8] != STORE_MAGIC {
        return Err(corrupt(0, "missing store header"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != STORE_VERSION {
        return Err(corrupt(8, &format!("unsupported store version {version}")));
    }
    let mut records = Vec::new();
    let mut pos = HEADER_LEN;
    while pos < bytes.len() {
        let start = pos;
        if bytes.len() - pos < 4 {
            return Err(corrupt(start, "truncated record length"));
        }
        let payload_len = read_u32(bytes, pos) as usize;
        pos += 4;
        if payload_len < FIXED_PAYLOAD_LEN || bytes.len() - pos < payload_len + 4 {
            return Err(corrupt(start, "truncated or undersized record"));
        }
        let payload = &bytes[pos..pos + payload_len];
        let checksum = read_u32(bytes, pos + payload_len);
        if checksum != payload_checksum(payload) {
            return Err(corrupt(start, "checksum mismatch"));
        }
        records.push(decode_payload(payload).map_err(|reason| corrupt(start, reason))?);
        pos += payload_len + 4;
    }
    Ok(records)
}

fn decode_payload(p: &[u8]) -> Result<StoreRecord, &'static str> {
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&p[..32]);
    let timestamp_ms = read_u64(p, 32);
    let latency_ms = read_u64(p, 40);
    let finish_reason = match p[48] {
        0 => FinishReason::Stop,
        1 => FinishReason::Length,
        2 => FinishReason::Error,
        _ => return Err("invalid finish reason"),
    };
    let usage = match p[49] {
        0 => None,
        1 => Some(Usage { prompt_tokens: read_u32(p, 50), output_tokens: read_u32(p, 54) }),
        _ => return Err("invalid usage flag"),
    };
    let text_len = read_u32(p, 58) as usize;
    if FIXED_PAYLOAD_LEN + text_len != p.len() {
        return Err("text length disagrees with record length");
    }
    let text = std::str::from_utf8(&p[FIXED_PAYLOAD_LEN..]).map_err(|_| "text is not valid UTF-8")?;
    Ok(StoreRecord {
        key: CacheKey(digest),
        response: StoredResponse { text: text.to_string(), finish_reason, usage, latency_ms, timestamp_ms },
    })
}

fn encode_record(key: &CacheKey, r: &StoredResponse) -> Vec<u8> {
    let mut payload = Vec::with_capacity(FIXED_PAYLOAD_LEN + r.text.len());
    payload.extend_from_slice(key.as_bytes());
    payload.extend_from_slice(&r.timestamp_ms.to_le_bytes());
    payload.extend_from_slice(&r.latency_ms.to_le_bytes());
    payload.push(match r.finish_reason {
        FinishReason::Stop => 0,
        FinishReason::Length => 1,
        FinishReason::Error => 2,
    });
    let usage = r.usage.unwrap_or(Usage { prompt_tokens: 0, output_tokens: 0 });
    payload.push(u8::from(r.usage.is_some()));
    payload.extend_from_slice(&usage.prompt_tokens.to_le_bytes());
    payload.extend_from_slice(&usage.output_tokens.to_le_bytes());
    payload.extend_from_slice(&(r.text.len() as u32).to_le_bytes());
    payload.extend_from_slice(r.text.as_bytes());

    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&payload_checksum(&payload).to_le_bytes());
    out
}

fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(STORE_MAGIC);
    h[8..].copy_from_slice(&STORE_VERSION.to_le_bytes());
    h
}

fn payload_checksum(payload: &[u8]) -> u32 {
    let d = Sha256::digest(payload);
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: u8) -> CacheKey {
        CacheKey([n; 32])
    }

    fn resp(text: &str) -> StoredResponse {
        StoredResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: Some(Usage { prompt_tokens: 10, output_tokens: 2 }),
            latency_ms: 42,
            timestamp_ms: 1_700_000_000_000,
        }
    }

    #[test]
    fn put_get_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let store = ResponseStore::open(&path).unwrap();
        assert!(store.put(key(1), resp("- aspirin")).unwrap());
        assert!(!store.put(key(1), resp("other")).unwrap(), "second write for a key is skipped");
        assert!(store.put(key(2), resp("\u{e9}t\u{e9}")).unwrap());
        drop(store);

        let reopened = ResponseStore::open_existing(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.get(&key(1)).unwrap(), resp("- aspirin"));
        assert_eq!(read_records(&path).unwrap().len(), 2);
    }

    #[test]
    fn flipped_byte_is_detected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let store = ResponseStore::open(&path).unwrap();
        store.put(key(1), resp("first")).unwrap();
        store.put(key(2), resp("second")).unwrap();
        drop(store);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 6;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match ResponseStore::open_existing(&path) {
            Err(BackendError::StoreCorrupt { offset, reason }) => {
                assert!(offset > HEADER_LEN as u64, "second record is the corrupt one");
                assert!(reason.contains("checksum"));
            }
            other => panic!("expected StoreCorrupt, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_bad_header_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let store = ResponseStore::open(&path).unwrap();
        store.put(key(3), resp("abc")).unwrap();
        drop(store);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ResponseStore::open_existing(&path), Err(BackendError::StoreCorrupt { .. })));
        std::fs::write(&path, b"garbage!!!!!").unwrap();
        assert!(matches!(ResponseStore::open_existing(&path), Err(BackendError::StoreCorrupt { offset: 0, .. })));
    }

    #[test]
    fn missing_store_for_replay() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ResponseStore::open_existing(dir.path().join("nope")), Err(BackendError::Io(_))));
    }

    #[test]
    fn write_store_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("export.bin");
        let recs = vec![
            StoreRecord { key: key(1), response: resp("a") },
            StoreRecord { key: key(1), response: resp("b") },
            StoreRecord { key: key(2), response: resp("c") },
        ];
        assert_eq!(write_store(&path, &recs).unwrap(), 2);
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].response.text, "a");
    }
}
