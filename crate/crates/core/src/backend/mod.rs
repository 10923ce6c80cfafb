//! Language-model access.
//!
//! Every simulator and the agent itself are reached through [`Backend`], a
//! blocking chat-completion call. Remote HTTP backends live in the std crate;
//! this module ships the scripted backend used for deterministic runs, JSON
//! extraction from noisy completions and the per-simulator output parsers.

mod json;
mod parse;
mod scripted;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use json::{extract_json, strip_reasoning};
pub use parse::{parse_task, parse_tool_result, parse_user, parse_verdict, ParseError, TaskDraft};
pub use scripted::{ScriptKeying, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(Role::Tool, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 16384,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    Transport,
    Timeout,
    RateLimited,
    MalformedOutput,
    RetriesExhausted,
    MissingScriptEntry,
}

impl BackendErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendErrorKind::Transport => "transport",
            BackendErrorKind::Timeout => "timeout",
            BackendErrorKind::RateLimited => "rate_limited",
            BackendErrorKind::MalformedOutput => "malformed_output",
            BackendErrorKind::RetriesExhausted => "retries_exhausted",
            BackendErrorKind::MissingScriptEntry => "missing_script_entry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub detail: String,
    pub attempts: u32,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
            attempts: 1,
        }
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(BackendErrorKind::MalformedOutput, detail)
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (attempts: {})",
            self.kind.as_str(),
            self.detail,
            self.attempts
        )
    }
}

impl core::error::Error for BackendError {}

/// A chat-completion endpoint. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

/// Backend defined by a closure. Handy for programmatic scripts in tests and
/// for adapters.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], _params: &CompletionParams) -> Result<String, BackendError> {
        (self.0)(messages)
    }
}

/// Sampling parameters plus the number of extra attempts allowed when a call
/// or its parse fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CallPolicy {
    pub params: CompletionParams,
    pub retry_budget: u32,
}

impl Default for CallPolicy {
    fn default() -> Self {
        Self {
            params: CompletionParams::default(),
            retry_budget: 2,
        }
    }
}

/// Runs `attempt` up to `retry_budget + 1` times. The closure receives the
/// zero-based attempt index. When every attempt fails the result is a
/// `retries_exhausted` error carrying the last failure and the attempt count.
pub fn with_retries<T>(
    retry_budget: u32,
    mut attempt: impl FnMut(u32) -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let total = retry_budget.saturating_add(1);
    let mut last = None;
    for i in 0..total {
        match attempt(i) {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    let last = last.expect("at least one attempt");
    Err(BackendError {
        kind: BackendErrorKind::RetriesExhausted,
        detail: alloc::format!("{}: {}", last.kind.as_str(), last.detail),
        attempts: total,
    })
}

/// Completion followed by JSON extraction and a typed parse, retried as a unit.
pub fn complete_parsed<T>(
    backend: &dyn Backend,
    messages: &[ChatMessage],
    policy: &CallPolicy,
    parse: impl Fn(&serde_json::Value) -> Result<T, ParseError>,
) -> Result<T, BackendError> {
    with_retries(policy.retry_budget, |_| {
        let text = backend.complete(messages, &policy.params)?;
        let value = extract_json(&text)?;
        parse(&value).map_err(ParseError::into_backend)
    })
}

/// The four simulator roles. A single backend may serve all of them.
#[derive(Clone)]
pub struct Simulators {
    pub task: Arc<dyn Backend>,
    pub tool: Arc<dyn Backend>,
    pub user: Arc<dyn Backend>,
    pub verifier: Arc<dyn Backend>,
}

impl Simulators {
    pub fn shared(backend: Arc<dyn Backend>) -> Self {
        Self {
            task: backend.clone(),
            tool: backend.clone(),
            user: backend.clone(),
            verifier: backend,
        }
    }
}

impl fmt::Debug for Simulators {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Simulators { .. }")
    }
}
