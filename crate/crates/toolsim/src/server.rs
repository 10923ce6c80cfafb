//! HTTP session API for external agents.
//!
//! The caller plays the agent. `POST /batches` prepares a step and opens one
//! session per rollout; the caller drives each session with
//! `POST /sessions/{id}/act` until it is done, then `POST
//! /batches/{id}/finalize` verifies, scores and evolves the difficulty. The
//! same rollout state machine backs self-contained runs, so identical backend
//! outputs give identical trajectories in both modes.
//!
//! | method | path                       | body               |
//! |--------|----------------------------|--------------------|
//! | GET    | `/curriculum`              |                    |
//! | POST   | `/batches`                 |                    |
//! | POST   | `/batches/{id}/finalize`   |                    |
//! | GET    | `/sessions/{id}`           |                    |
//! | POST   | `/sessions/{id}/act`       | `{"text": "..."}`  |
//! | POST   | `/sessions/{id}/abort`     | `{"reason": "..."}`|

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use toolsim_core::backend::ChatMessage;
use toolsim_core::curriculum::{derive_levels, AspectLevels, DifficultyState};
use toolsim_core::rollout::{Event, Rollout, RolloutError, Status, StepOutcome};

use crate::error::Result;
use crate::orchestrator::{
    finalize_step, new_rollout, prepare_step, trajectory_id, BatchArtifact, Environment, Finished, PreparedStep,
    TaskFailure,
};
use crate::persist::RunStore;

type Session = Arc<Mutex<Option<Rollout>>>;

struct OpenBatch {
    id: String,
    prepared: PreparedStep,
    /// `sessions[task][member]`.
    sessions: Vec<Vec<Session>>,
    index: HashMap<String, Session>,
}

enum Slot {
    Empty,
    Preparing,
    Open(OpenBatch),
    Finalizing,
}

struct Inner {
    state: DifficultyState,
    slot: Slot,
}

pub struct AppState {
    env: Environment,
    store: Option<RunStore>,
    inner: Mutex<Inner>,
}

impl AppState {
    /// Resumes from `store` when it already holds steps.
    pub fn new(env: Environment, store: Option<RunStore>) -> Result<Self> {
        let initial = env.initial_state();
        let state = match &store {
            Some(s) => s.resume_state(initial)?,
            None => initial,
        };
        Ok(Self { env, store, inner: Mutex::new(Inner { state, slot: Slot::Empty }) })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn session(&self, id: &str) -> std::result::Result<Session, ApiError> {
        match &self.lock().slot {
            Slot::Open(b) => b.index.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no session {id}"))),
            _ => Err(ApiError::not_found(format!("no session {id}"))),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self { status: StatusCode::CONFLICT, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn lock_session(s: &Session) -> MutexGuard<'_, Option<Rollout>> {
    s.lock().unwrap_or_else(|e| e.into_inner())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumView {
    pub difficulty: u32,
    pub step_index: u64,
    pub levels: AspectLevels,
    pub batch_open: bool,
}

async fn curriculum(State(app): State<Arc<AppState>>) -> Json<CurriculumView> {
    let inner = app.lock();
    Json(CurriculumView {
        difficulty: inner.state.difficulty,
        step_index: inner.state.step_index,
        levels: derive_levels(&inner.state, &app.env.config.curriculum),
        batch_open: !matches!(inner.slot, Slot::Empty),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOpening {
    pub session_id: String,
    pub task_id: String,
    /// What the agent sees: system prompt and first user query.
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub batch_id: String,
    pub step: u64,
    pub difficulty: u32,
    pub derived_levels: AspectLevels,
    pub sessions: Vec<SessionOpening>,
    pub failed_tasks: Vec<TaskFailure>,
}

// Bodyless POST handlers still drain any request body: hyper drops the
// keep-alive connection when a body is left unread.
async fn open_batch(State(app): State<Arc<AppState>>, _body: Bytes) -> ApiResult<BatchView> {
    let state = {
        let mut inner = app.lock();
        match inner.slot {
            Slot::Empty => inner.slot = Slot::Preparing,
            Slot::Open(ref b) => return Err(ApiError::conflict(format!("batch {} is still open", b.id))),
            _ => return Err(ApiError::conflict("another batch is being prepared or finalized")),
        }
        inner.state
    };
    let worker = app.clone();
    let prepared = blocking(move || prepare_step(&worker.env, &state)).await;
    let prepared = match prepared {
        Ok(p) => p,
        Err(e) => {
            app.lock().slot = Slot::Empty;
            return Err(e);
        }
    };

    let id = format!("{}-s{:05}", app.env.config.run_id, state.step_index);
    let mut sessions = Vec::with_capacity(prepared.tasks.len());
    let mut index = HashMap::new();
    let mut openings = Vec::new();
    for task in &prepared.tasks {
        let mut group = Vec::with_capacity(app.env.config.group_size);
        for m in 0..app.env.config.group_size {
            let rollout = new_rollout(&app.env, task);
            let sid = trajectory_id(&task.task_id, m);
            openings.push(SessionOpening {
                session_id: sid.clone(),
                task_id: task.task_id.clone(),
                messages: rollout.agent_messages().to_vec(),
            });
            let s: Session = Arc::new(Mutex::new(Some(rollout)));
            index.insert(sid, s.clone());
            group.push(s);
        }
        sessions.push(group);
    }
    let view = BatchView {
        batch_id: id.clone(),
        step: state.step_index,
        difficulty: state.difficulty,
        derived_levels: prepared.derived,
        sessions: openings,
        failed_tasks: prepared.failures.clone(),
    };
    app.lock().slot = Slot::Open(OpenBatch { id, prepared, sessions, index });
    Ok(Json(view))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub task_id: String,
    pub done: bool,
    pub status: Option<Status>,
    pub abort_reason: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub events: Vec<Event>,
}

fn view(id: &str, r: &Rollout) -> SessionView {
    SessionView {
        session_id: id.to_string(),
        task_id: r.task_id().to_string(),
        done: r.is_done(),
        status: r.status(),
        abort_reason: r.abort_reason().map(str::to_string),
        messages: r.agent_messages().to_vec(),
        events: r.events().to_vec(),
    }
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let s = app.session(&id)?;
    let guard = lock_session(&s);
    let r = guard.as_ref().ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
    Ok(Json(view(&id, r)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRequest {
    pub text: String,
}

async fn act(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ActRequest>,
) -> ApiResult<StepOutcome> {
    let s = app.session(&id)?;
    let worker = app.clone();
    let outcome = blocking(move || {
        let mut guard = lock_session(&s);
        match guard.as_mut() {
            Some(r) => r.apply_agent_output(&req.text, &worker.env.simulators).map_err(|e| match e {
                RolloutError::AlreadyDone => ApiError::conflict(format!("session {id} is done")),
                other => ApiError::internal(other.to_string()),
            }),
            None => Err(ApiError::not_found(format!("no session {id}"))),
        }
    })
    .await??;
    Ok(Json(outcome))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbortRequest {
    #[serde(default)]
    pub reason: Option<String>,
}

async fn abort(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<AbortRequest>>,
) -> ApiResult<SessionView> {
    let s = app.session(&id)?;
    let mut guard = lock_session(&s);
    let r = guard.as_mut().ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
    if r.is_done() {
        return Err(ApiError::conflict(format!("session {id} is done")));
    }
    let reason = body.and_then(|b| b.0.reason).unwrap_or_else(|| "aborted by client".into());
    r.abort(format!("client: {reason}"));
    Ok(Json(view(&id, r)))
}

async fn finalize(State(app): State<Arc<AppState>>, Path(id): Path<String>, _body: Bytes) -> ApiResult<BatchArtifact> {
    let batch = {
        let mut inner = app.lock();
        match &inner.slot {
            Slot::Open(b) if b.id == id => {}
            _ => return Err(ApiError::not_found(format!("no open batch {id}"))),
        }
        let Slot::Open(b) = std::mem::replace(&mut inner.slot, Slot::Finalizing) else { unreachable!() };
        let running: Vec<&String> =
            b.index.iter().filter(|(_, s)| lock_session(s).as_ref().is_some_and(|r| !r.is_done())).map(|(k, _)| k).collect();
        if !running.is_empty() {
            let mut running: Vec<String> = running.into_iter().cloned().collect();
            running.sort();
            inner.slot = Slot::Open(b);
            return Err(ApiError::conflict(format!("sessions still running: {}", running.join(", "))));
        }
        b
    };

    let worker = app.clone();
    let result = blocking(move || -> std::result::Result<BatchArtifact, ApiError> {
        let rollouts: Vec<Vec<Finished>> = batch
            .sessions
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|s| {
                        let r = lock_session(s).take().expect("sessions are taken only here");
                        let reason = r.abort_reason().map(str::to_string);
                        (r.into_trajectory().expect("checked done"), reason)
                    })
                    .collect()
            })
            .collect();
        let artifact = finalize_step(&worker.env, &batch.prepared, rollouts);
        if let Some(store) = &worker.store {
            store.write_step(&artifact).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(artifact)
    })
    .await;

    let mut inner = app.lock();
    inner.slot = Slot::Empty;
    let artifact = result??;
    inner.state = artifact.next_state();
    Ok(Json(artifact))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/curriculum", get(curriculum))
        .route("/batches", post(open_batch))
        .route("/batches/{id}/finalize", post(finalize))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/act", post(act))
        .route("/sessions/{id}/abort", post(abort))
        .with_state(app)
}

/// Serves until ctrl-c.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on its own runtime thread, stopped on drop.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn(app: Arc<AppState>, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await {
                log::error!("server stopped: {e}");
            }
        });
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
