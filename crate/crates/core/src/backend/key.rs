use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmRequest, Mode, Prompt};

const KEY_DOMAIN: &[u8] = b"clinsv-cache-key-v1";

/// SHA-256 over a canonical, field-ordered, length-prefixed encoding of a
/// request.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn for_request(request: &LlmRequest) -> Self {
        CacheKey(Sha256::digest(canonical_bytes(request)).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

/// Canonical encoding hashed by [`CacheKey::for_request`].
///
/// Layout: domain tag, then each field in declaration order. Strings are
/// `u64` little-endian byte length followed by UTF-8 bytes; lists are a
/// `u64` count followed by their elements; the temperature is its IEEE-754
/// bit pattern.
pub fn canonical_bytes(request: &LlmRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + request.prompt.text().len());
    put_bytes(&mut out, KEY_DOMAIN);
    put_str(&mut out, &request.model_id);
    out.push(match request.mode() {
        Mode::Chat => 1,
        Mode::Completion => 2,
    });
    match &request.prompt {
        Prompt::Completion(text) => put_str(&mut out, text),
        Prompt::Chat(messages) => {
            out.extend_from_slice(&(messages.len() as u64).to_le_bytes());
            for m in messages {
                put_str(&mut out, m.role.as_str());
                put_str(&mut out, &m.content);
            }
        }
    }
    out.extend_from_slice(&request.temperature.to_bits().to_le_bytes());
    out.extend_from_slice(&u64::from(request.max_output_tokens).to_le_bytes());
    out.extend_from_slice(&(request.stop_sequences.len() as u64).to_le_bytes());
    for s in &request.stop_sequences {
        put_str(&mut out, s);
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({})", &self.to_hex()[..16])
    }
}

impl From<CacheKey> for String {
    fn from(k: CacheKey) -> String {
        k.to_hex()
    }
}

impl TryFrom<String> for CacheKey {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let bytes = hex::decode(&s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| format!("cache key must be 32 bytes: {s}"))?;
        Ok(CacheKey(arr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, Role};
    use proptest::prelude::*;

    fn base() -> LlmRequest {
        LlmRequest {
            model_id: "gpt-4".into(),
            prompt: Prompt::Chat(vec![ChatMessage::new(Role::System, "sys"), ChatMessage::new(Role::User, "note")]),
            temperature: 0.1,
            max_output_tokens: 1024,
            stop_sequences: vec!["\n\n".into()],
        }
    }

    #[test]
    fn equal_requests_equal_keys() {
        assert_eq!(base().cache_key(), base().cache_key());
    }

    #[test]
    fn length_prefix_prevents_boundary_collisions() {
        let mut a = base();
        let mut b = base();
        a.prompt = Prompt::Chat(vec![ChatMessage::new(Role::User, "ab"), ChatMessage::new(Role::User, "c")]);
        b.prompt = Prompt::Chat(vec![ChatMessage::new(Role::User, "a"), ChatMessage::new(Role::User, "bc")]);
        assert_ne!(a.cache_key(), b.cache_key());
        a.stop_sequences = vec!["x".into(), "y".into()];
        b = a.clone();
        b.stop_sequences = vec!["xy".into()];
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn mode_is_part_of_key() {
        let mut a = base();
        a.prompt = Prompt::Completion("note".into());
        let mut b = base();
        b.prompt = Prompt::Chat(vec![ChatMessage::new(Role::User, "note")]);
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn hex_round_trip() {
        let k = base().cache_key();
        let s: String = k.into();
        assert_eq!(CacheKey::try_from(s).unwrap(), k);
    }

    proptest! {
        #[test]
        fn single_field_perturbation_changes_digest(
            field in 0usize..6,
            text in "[a-z ]{0,12}",
            temp in 0.0f64..2.0,
            tokens in 1u32..5000,
        ) {
            let r = base();
            let mut p = r.clone();
            match field {
                0 => p.model_id.push_str(&format!("-{text}x")),
                1 => p.prompt = Prompt::Chat(vec![ChatMessage::new(Role::System, "sys"), ChatMessage::new(Role::User, format!("note{text}!"))]),
                2 => p.prompt = Prompt::Completion(format!("sys\n\nnote{text}")),
                3 => p.temperature = if temp == r.temperature { temp + 0.5 } else { temp },
                4 => p.max_output_tokens = if tokens == r.max_output_tokens { tokens + 1 } else { tokens },
                _ => p.stop_sequences.push(text.clone()),
            }
            prop_assert_ne!(r.cache_key(), p.cache_key());
        }
    }
}
