//! Blocking chat-completions client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use toolsim_core::backend::{Backend, BackendError, BackendErrorKind, ChatMessage, CompletionParams};

use crate::config::RemoteConfig;

const MAX_BACKOFF: Duration = Duration::from_secs(10);

/// Counting gate bounding concurrent requests.
struct Gate {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    gate: Gate,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("url", &self.url).field("model", &self.model).finish()
    }
}

enum Failure {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(cfg: &RemoteConfig) -> Self {
        let api_key = cfg.api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: &RemoteConfig, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            gate: Gate::new(cfg.max_in_flight),
        }
    }

    fn request_body(&self, messages: &[ChatMessage], params: &CompletionParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(stop) = &params.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, Failure> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| {
            let kind = match e {
                ureq::Error::Timeout(_) => BackendErrorKind::Timeout,
                _ => BackendErrorKind::Transport,
            };
            Failure::Retry(BackendError::new(kind, e.to_string()))
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| {
            let kind = match e {
                ureq::Error::Timeout(_) => BackendErrorKind::Timeout,
                _ => BackendErrorKind::Transport,
            };
            Failure::Retry(BackendError::new(kind, e.to_string()))
        })?;
        match status {
            200..=299 => {}
            429 => return Err(Failure::Retry(BackendError::new(BackendErrorKind::RateLimited, "HTTP 429"))),
            500..=599 => {
                return Err(Failure::Retry(BackendError::new(BackendErrorKind::Transport, format!("HTTP {status}"))))
            }
            _ => {
                let snippet: String = text.chars().take(200).collect();
                return Err(Failure::Fatal(BackendError::new(
                    BackendErrorKind::Transport,
                    format!("HTTP {status}: {snippet}"),
                )));
            }
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(BackendError::malformed(format!("response body is not JSON: {e}"))))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal(BackendError::malformed("response lacks choices[0].message.content")))
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError> {
        let body = self.request_body(messages, params);
        let total = self.max_retries.saturating_add(1);
        let mut last = None;
        for attempt in 0..total {
            if attempt > 0 {
                let wait = self.backoff.saturating_mul(1 << (attempt - 1).min(16)).min(MAX_BACKOFF);
                thread::sleep(wait);
            }
            let outcome = {
                let _permit = self.gate.acquire();
                self.attempt(&body)
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(mut e)) => {
                    e.attempts = attempt + 1;
                    return Err(e);
                }
                Err(Failure::Retry(e)) => {
                    log::debug!("{} attempt {}: {}", self.url, attempt + 1, e);
                    last = Some(e);
                }
            }
        }
        let last = last.expect("at least one attempt");
        Err(BackendError {
            kind: BackendErrorKind::RetriesExhausted,
            detail: format!("{}: {}", last.kind.as_str(), last.detail),
            attempts: total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        thread::scope(|s| {
            for _ in 0..8 {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                s.spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(10));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn request_shape() {
        let b = RemoteBackend::with_key(&RemoteConfig { base_url: "http://x/v1/".into(), ..Default::default() }, None);
        assert_eq!(b.url, "http://x/v1/chat/completions");
        let body = b.request_body(&[ChatMessage::user("hi")], &CompletionParams::default());
        assert_eq!(body["messages"][0], json!({"role": "user", "content": "hi"}));
        assert_eq!(body["max_tokens"], 16384);
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn unreachable_server_exhausts_retries() {
        let cfg = RemoteConfig {
            base_url: "http://127.0.0.1:9/v1".into(),
            max_retries: 1,
            backoff_ms: 1,
            timeout_ms: 500,
            ..Default::default()
        };
        let err = RemoteBackend::new(&cfg).complete(&[ChatMessage::user("x")], &CompletionParams::default()).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::RetriesExhausted);
        assert_eq!(err.attempts, 2);
    }
}
