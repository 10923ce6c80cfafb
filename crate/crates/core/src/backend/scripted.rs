use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendErrorKind, ChatMessage, CompletionParams};

/// How a scripted backend turns a message sequence into a lookup key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKeying {
    /// Exact content of the last message.
    #[default]
    LastMessage,
    /// Lowercase hex SHA-256 over every message, each encoded as
    /// `role 0x1f content 0x1e`.
    ConversationDigest,
    /// Longest script key occurring as a substring of `"[role] content"` of the
    /// last message; ties go to the lexicographically smallest key.
    Contains,
}

/// Deterministic backend answering from a fixed table. The key `"*"` is a
/// fallback used when nothing else matches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScriptedBackend {
    entries: BTreeMap<String, String>,
    keying: ScriptKeying,
}

pub const FALLBACK_KEY: &str = "*";

impl ScriptedBackend {
    pub fn new(entries: BTreeMap<String, String>, keying: ScriptKeying) -> Self {
        Self { entries, keying }
    }

    /// Parses the script file format: a JSON object mapping key to response.
    pub fn from_json(text: &str, keying: ScriptKeying) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?, keying))
    }

    pub fn with_entry(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.insert(key.into(), response.into());
        self
    }

    pub fn keying(&self) -> ScriptKeying {
        self.keying
    }

    pub fn digest(messages: &[ChatMessage]) -> String {
        let mut h = Sha256::new();
        for m in messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0x1f]);
            h.update(m.content.as_bytes());
            h.update([0x1e]);
        }
        let mut out = String::with_capacity(64);
        for b in h.finalize().iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    fn lookup(&self, messages: &[ChatMessage]) -> Option<&String> {
        let last = messages.last()?;
        let hit = match self.keying {
            ScriptKeying::LastMessage => self.entries.get(&last.content),
            ScriptKeying::ConversationDigest => self.entries.get(&Self::digest(messages)),
            ScriptKeying::Contains => {
                let hay = format!("[{}] {}", last.role.as_str(), last.content);
                self.entries
                    .iter()
                    .filter(|(k, _)| k.as_str() != FALLBACK_KEY && hay.contains(k.as_str()))
                    .fold(None::<(&String, &String)>, |best, (k, v)| match best {
                        Some((bk, _)) if bk.len() >= k.len() => best,
                        _ => Some((k, v)),
                    })
                    .map(|(_, v)| v)
            }
        };
        hit.or_else(|| self.entries.get(FALLBACK_KEY))
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &CompletionParams) -> Result<String, BackendError> {
        self.lookup(messages).cloned().ok_or_else(|| {
            let key = match (self.keying, messages.last()) {
                (ScriptKeying::ConversationDigest, _) => Self::digest(messages),
                (_, Some(m)) => m.content.chars().take(80).collect(),
                (_, None) => String::new(),
            };
            BackendError::new(
                BackendErrorKind::MissingScriptEntry,
                format!("no scripted response for key {key:?}"),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params() -> CompletionParams {
        CompletionParams::default()
    }

    #[test]
    fn table_lookup() {
        let b = ScriptedBackend::default().with_entry("k1", "hello");
        assert_eq!(b.complete(&[ChatMessage::user("k1")], &params()).unwrap(), "hello");
        let err = b.complete(&[ChatMessage::user("k2")], &params()).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::MissingScriptEntry);
    }

    #[test]
    fn contains_prefers_longest_key_then_fallback() {
        let b = ScriptedBackend::new(BTreeMap::new(), ScriptKeying::Contains)
            .with_entry("weather", "short")
            .with_entry("weather in Oslo", "long")
            .with_entry("[tool]", "after tool")
            .with_entry("*", "fallback");
        let ask = |m: ChatMessage| b.complete(&[m], &params()).unwrap();
        assert_eq!(ask(ChatMessage::user("the weather in Oslo today")), "long");
        assert_eq!(ask(ChatMessage::user("weather please")), "short");
        assert_eq!(ask(ChatMessage::tool("{}")), "after tool");
        assert_eq!(ask(ChatMessage::user("unrelated")), "fallback");
    }

    #[test]
    fn digest_depends_on_whole_conversation() {
        let a = vec![ChatMessage::system("s"), ChatMessage::user("u")];
        let b = vec![ChatMessage::system("t"), ChatMessage::user("u")];
        assert_ne!(ScriptedBackend::digest(&a), ScriptedBackend::digest(&b));
        let key = ScriptedBackend::digest(&a);
        assert_eq!(key.len(), 64);
        let backend = ScriptedBackend::new(BTreeMap::new(), ScriptKeying::ConversationDigest).with_entry(key, "hit");
        assert_eq!(backend.complete(&a, &params()).unwrap(), "hit");
        assert!(backend.complete(&b, &params()).is_err());
    }

    #[test]
    fn script_file_format() {
        let b = ScriptedBackend::from_json(r#"{"k1": "hello"}"#, ScriptKeying::LastMessage).unwrap();
        assert_eq!(b.complete(&[ChatMessage::user("k1")], &params()).unwrap(), "hello");
    }
}
