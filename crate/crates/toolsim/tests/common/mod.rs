#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use toolsim::config::RunConfig;
use toolsim::orchestrator::BatchArtifact;
use toolsim::server::{BatchView, SessionView};
use toolsim_core::backend::Backend;
use toolsim_core::rollout::StepOutcome;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The bundled five-step scripted configuration, writing to `out`.
pub fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&repo_root().join("data/desk/desk.toml")).expect("desk config loads");
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn trajectory_schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(repo_root().join("docs/trajectory.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).expect("schema compiles")
}

pub fn http() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

pub fn post_json(agent: &ureq::Agent, url: &str, body: &Value) -> (u16, Value) {
    let mut resp = agent.post(url).send_json(body).expect("request reaches server");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn get_json(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut resp = agent.get(url).call().expect("request reaches server");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

/// Plays one batch through the session API with `policy` as the agent and
/// returns the finalized artifact.
pub fn drive_batch(base: &str, policy: &dyn Backend) -> BatchArtifact {
    let http = http();
    let (status, body) = post_json(&http, &format!("{base}/batches"), &json!({}));
    assert_eq!(status, 200, "{body}");
    let batch: BatchView = serde_json::from_value(body).unwrap();
    for s in &batch.sessions {
        loop {
            let (status, body) = get_json(&http, &format!("{base}/sessions/{}", s.session_id));
            assert_eq!(status, 200, "{body}");
            let view: SessionView = serde_json::from_value(body).unwrap();
            if view.done {
                break;
            }
            let params = toolsim_core::backend::CompletionParams::default();
            let (status, body) = match policy.complete(&view.messages, &params) {
                Ok(text) => post_json(&http, &format!("{base}/sessions/{}/act", s.session_id), &json!({ "text": text })),
                Err(e) => post_json(
                    &http,
                    &format!("{base}/sessions/{}/abort", s.session_id),
                    &json!({ "reason": e.to_string() }),
                ),
            };
            assert_eq!(status, 200, "{body}");
            if body.get("events").is_some() {
                let _: StepOutcome = serde_json::from_value(body).unwrap();
            }
        }
    }
    let (status, body) = post_json(&http, &format!("{base}/batches/{}/finalize", batch.batch_id), &json!({}));
    assert_eq!(status, 200, "{body}");
    serde_json::from_value(body).unwrap()
}

/// What the fault-injecting stub did, by category.
#[derive(Debug, Default)]
pub struct FaultCounts {
    pub requests: AtomicUsize,
    pub timeouts: AtomicUsize,
    pub server_errors: AtomicUsize,
    pub malformed: AtomicUsize,
}

impl FaultCounts {
    pub fn faults(&self) -> usize {
        self.timeouts.load(Ordering::SeqCst) + self.server_errors.load(Ordering::SeqCst) + self.malformed.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
struct StubState {
    fault_rate: f64,
    stall: Duration,
    rng: Arc<Mutex<ChaCha8Rng>>,
    counts: Arc<FaultCounts>,
}

impl StubState {
    fn uniform(&self) -> f64 {
        (self.rng.lock().unwrap().next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn completion(content: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] })
}

/// Plausible answers for each role. The agent role is selected by model name
/// `agent`; simulator roles are recognized by their prompt openings.
fn answer(state: &StubState, body: &Value) -> String {
    let prompt = body["messages"].as_array().and_then(|m| m.last()).and_then(|m| m["content"].as_str()).unwrap_or("");
    let roll = state.uniform();
    if body["model"] == "agent" {
        return if roll < 0.5 {
            "<tool_call>\n{\"name\": \"get_weather\", \"arguments\": {\"city\": \"Oslo\"}}\n</tool_call>".into()
        } else {
            format!("It is {} degrees in Oslo.", (roll * 30.0) as i32)
        };
    }
    if prompt.starts_with("You are an expert at creating realistic tasks") {
        json!({
            "expected_tool_calls": [],
            "user_intent": "Know the weather",
            "user_persona": "A traveller",
            "first_user_query": "How warm is Oslo right now?"
        })
        .to_string()
    } else if prompt.starts_with("You are an environment simulator") {
        json!({ "result": "{\"temp_c\": 11}", "reward": 1 }).to_string()
    } else if prompt.starts_with("You are simulating a human user") {
        let response = if roll < 0.3 { "And tomorrow?" } else { "" };
        json!({ "response": response, "reward": 0 }).to_string()
    } else {
        let reward = (roll * 3.0) as i64 - 1;
        format!("```json\n{}\n```", json!({ "reward": reward, "reasoning": "stub verdict" }))
    }
}

async fn chat(State(state): State<StubState>, Json(body): Json<Value>) -> Response {
    state.counts.requests.fetch_add(1, Ordering::SeqCst);
    let roll = state.uniform();
    if roll < state.fault_rate {
        let which = roll / state.fault_rate;
        if which < 1.0 / 3.0 {
            state.counts.timeouts.fetch_add(1, Ordering::SeqCst);
            tokio::time::sleep(state.stall).await;
        } else if which < 2.0 / 3.0 {
            state.counts.server_errors.fetch_add(1, Ordering::SeqCst);
            return (StatusCode::INTERNAL_SERVER_ERROR, "overloaded").into_response();
        } else {
            state.counts.malformed.fetch_add(1, Ordering::SeqCst);
            return (StatusCode::OK, [("content-type", "application/json")], "{\"choices\": [{\"mess").into_response();
        }
    }
    Json(completion(&answer(&state, &body))).into_response()
}

pub struct Stub {
    pub addr: SocketAddr,
    pub counts: Arc<FaultCounts>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Stub {
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Chat-completions stub that stalls past the client timeout, answers 500, or
/// sends a truncated body, each on a third of `fault_rate` of requests.
pub fn fault_stub(fault_rate: f64, stall: Duration, seed: u64) -> Stub {
    let counts = Arc::new(FaultCounts::default());
    let state = StubState { fault_rate, stall, rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))), counts: counts.clone() };
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(state);
    serve_stub(app, counts)
}

/// Fixed-status stub counting requests, for retry accounting.
pub fn status_stub(status: u16, body: &'static str) -> Stub {
    let counts = Arc::new(FaultCounts::default());
    let c = counts.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move || {
            let c = c.clone();
            async move {
                c.requests.fetch_add(1, Ordering::SeqCst);
                (StatusCode::from_u16(status).unwrap(), [("content-type", "application/json")], body)
            }
        }),
    );
    serve_stub(app, counts)
}

/// Stub that never answers within `stall`.
pub fn stall_stub(stall: Duration) -> Stub {
    let counts = Arc::new(FaultCounts::default());
    let c = counts.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move || {
            let c = c.clone();
            async move {
                c.requests.fetch_add(1, Ordering::SeqCst);
                c.timeouts.fetch_add(1, Ordering::SeqCst);
                tokio::time::sleep(stall).await;
                Json(completion("late"))
            }
        }),
    );
    serve_stub(app, counts)
}

fn serve_stub(app: Router, counts: Arc<FaultCounts>) -> Stub {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Stub { addr, counts, shutdown: Some(tx), thread: Some(thread) }
}

/// Recomputes per-group advantages and the mean reward from an artifact's
/// scored members, independently of the orchestrator.
pub fn recompute(artifact: &BatchArtifact) -> (Option<f64>, Vec<Vec<Option<f64>>>) {
    let mut all = Vec::new();
    let mut per_task = Vec::new();
    for task in &artifact.tasks {
        let rewards: Vec<f64> =
            task.trajectories.iter().filter_map(|r| r.reward.as_ref()).map(|r| f64::from(r.reward.value())).collect();
        all.extend(rewards.iter().copied());
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        let mut out = Vec::new();
        for rec in &task.trajectories {
            out.push(match (&rec.reward, rewards.len() >= 2) {
                (Some(r), true) if std > 1e-8 => Some((f64::from(r.reward.value()) - mean) / std),
                (Some(_), true) => Some(0.0),
                _ => None,
            });
        }
        per_task.push(out);
    }
    let mean = if all.is_empty() { None } else { Some(all.iter().sum::<f64>() / all.len() as f64) };
    (mean, per_task)
}
