//! HTTP surface for live sessions: episodes are created from a scenario,
//! sessions are opened one at a time, and each session publishes an ordered
//! event stream that clients can replay from any sequence number.

mod error;
mod events;
mod live;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use m3c_core::backend::{BackendKind, BackendSpec, Script, ScriptedBackend};
use m3c_core::orchestrator::{empty_episode, plan_session, shared_agents, EngineConfig, SessionRunner};
use m3c_core::pipeline::Scenario;
use m3c_core::{AgentBackend, BackendError, Embedder, MemoryGraph, SpeakerId, TimeInterval};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use error::ApiError;
pub use events::{event_stream, parse_sse, EventKind, EventLog, SessionEvent};
pub use live::{CloseReport, SessionStatus};

use live::{Driver, EpisodeEntry, LiveSession};

pub const DEFAULT_FLOOR_WINDOW_MS: u64 = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    /// How long the engine holds a turn open for a human seat.
    pub floor_window_ms: u64,
    /// Episode seed when a request gives none.
    pub seed: u64,
    pub engine: EngineConfig,
    pub backend: BackendSpec,
    /// Finished episodes and their memory graphs are written here.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            floor_window_ms: DEFAULT_FLOOR_WINDOW_MS,
            seed: 0,
            engine: EngineConfig::default(),
            backend: BackendSpec::default(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("CONFIG: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ServeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ServeError::Config(e.to_string()))
    }
}

/// Shared server state. Build it outside any async runtime: remote backends
/// own a blocking HTTP client.
pub struct AppState {
    config: ServerConfig,
    agent: Arc<dyn AgentBackend>,
    embedder: Arc<dyn Embedder>,
    counter: AtomicU64,
    episodes: Mutex<BTreeMap<String, Arc<Mutex<EpisodeEntry>>>>,
    sessions: Mutex<BTreeMap<String, Arc<LiveSession>>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, ServeError> {
        config.engine.check().map_err(|e| ServeError::Config(e.to_string()))?;
        let agent = config.backend.agent(config.seed)?;
        let embedder = config.backend.embedder()?;
        Ok(Arc::new(Self {
            config,
            agent,
            embedder,
            counter: AtomicU64::new(0),
            episodes: Mutex::default(),
            sessions: Mutex::default(),
        }))
    }

    fn episode(&self, id: &str) -> Result<Arc<Mutex<EpisodeEntry>>, ApiError> {
        self.episodes.lock().expect("registry lock").get(id).cloned().ok_or_else(|| ApiError::UnknownEpisode(id.into()))
    }

    fn session(&self, id: &str) -> Result<Arc<LiveSession>, ApiError> {
        self.sessions.lock().expect("registry lock").get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.into()))
    }

    fn backend_for(&self, script: Option<Script>, seed: u64) -> Result<Arc<dyn AgentBackend>, ApiError> {
        if let Some(script) = script {
            return Ok(Arc::new(ScriptedBackend::new(script, seed)));
        }
        match self.config.backend.kind {
            BackendKind::Scripted => {
                self.config.backend.agent(seed).map_err(|e| ApiError::Engine { code: e.code(), message: e.to_string() })
            }
            BackendKind::Remote => Ok(Arc::clone(&self.agent)),
        }
    }
}

/// Either a bare scenario or a scenario with options.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CreateBody {
    Wrapped(CreateEpisode),
    Bare(Scenario),
}

#[derive(Debug, Deserialize)]
pub struct CreateEpisode {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Speaker seat taken by a person.
    #[serde(default)]
    pub human: Option<SpeakerId>,
    /// Per-episode scripted backend, overriding the configured one.
    #[serde(default)]
    pub script: Option<Script>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct OpenSession {
    /// Overrides the planned gap before this session.
    pub interval: Option<TimeInterval>,
    /// Lets a human main speaker introduce the pending item.
    pub human_inserts: bool,
}

#[derive(Debug, Deserialize)]
pub struct PostUtterance {
    pub text: String,
    #[serde(default)]
    pub introduce: bool,
    #[serde(default)]
    pub speaker: Option<SpeakerId>,
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    pub from: Option<u64>,
}

async fn create_episode(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateBody>,
) -> Result<impl IntoResponse, ApiError> {
    let body = match body {
        CreateBody::Wrapped(b) => b,
        CreateBody::Bare(scenario) => CreateEpisode { scenario, seed: None, human: None, script: None },
    };
    body.scenario.validate().map_err(|e| ApiError::Engine { code: e.code(), message: e.to_string() })?;
    if let Some(h) = &body.human {
        if !body.scenario.speakers.iter().any(|s| &s.id == h) {
            return Err(ApiError::BadRequest(format!("no speaker {h} in scenario")));
        }
    }
    let seed = body.seed.unwrap_or(state.config.seed);
    let backend = state.backend_for(body.script, seed)?;
    let n = state.counter.fetch_add(1, Ordering::Relaxed) + 1;
    let id = format!("ep{n}");
    let mut episode = empty_episode(&body.scenario);
    episode.id = id.clone();
    let entry = EpisodeEntry {
        scenario: body.scenario,
        episode,
        graph: MemoryGraph::new(),
        backend,
        human: body.human,
        seed,
        active: None,
    };
    state.episodes.lock().expect("registry lock").insert(id.clone(), Arc::new(Mutex::new(entry)));
    tracing::info!(episode = %id, "episode created");
    Ok((StatusCode::CREATED, Json(json!({ "episode_id": id }))))
}

async fn open_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<OpenSession>>,
) -> Result<impl IntoResponse, ApiError> {
    let body = body.map(|b| b.0).unwrap_or_default();
    let entry_arc = state.episode(&id)?;
    let mut entry = entry_arc.lock().expect("episode lock");
    if let Some(active) = &entry.active {
        return Err(ApiError::SessionActive(active.clone()));
    }
    if entry.episode.status.is_some() {
        return Err(ApiError::SessionClosed);
    }
    let index = entry.episode.sessions.len();
    if index >= entry.scenario.sessions.len() {
        return Err(ApiError::NoMoreSessions);
    }
    if let (Some(interval), Some(i)) = (body.interval, index.checked_sub(1)) {
        entry.episode.intervals[i] = interval;
    }

    let session = plan_session(&entry.scenario, index);
    let human = entry.human.clone().filter(|h| session.participants().contains(&h));
    let may_insert = body.human_inserts && human.as_ref() == Some(&session.main_speaker);
    let runner = SessionRunner::open(
        session,
        &entry.scenario.speakers,
        entry.scenario.item_map(),
        &entry.graph,
        state.embedder.as_ref(),
        entry.seed,
        state.config.engine.clone(),
    )?;
    let session_id = format!("{id}-s{index}");
    let live = Arc::new(LiveSession::new(session_id.clone(), id.clone(), index, human.clone(), may_insert));
    let mut agents = shared_agents(&entry.scenario.speakers, Arc::clone(&entry.backend));
    if let (Some(h), Some(seat)) = (&human, live.seat()) {
        agents.insert(h.clone(), Arc::new(seat));
    }
    live.log.push(
        EventKind::SessionOpened,
        json!({
            "session_id": session_id,
            "index": index,
            "main_speaker": runner.session().main_speaker,
            "partners": runner.session().partners,
            "modality_slots": runner.session().modality_slots,
            "human": human,
            "opening_memory": runner.opening.as_ref().map(|r| r.memory_ids()),
        }),
    );
    entry.active = Some(session_id.clone());
    let driver = Driver {
        live: Arc::clone(&live),
        runner,
        agents,
        summarizer: Arc::clone(&entry.backend),
        embedder: Arc::clone(&state.embedder),
        graph: entry.graph.clone(),
        entry: Arc::clone(&entry_arc),
        engine: state.config.engine.clone(),
        floor_window: Duration::from_millis(state.config.floor_window_ms),
        persist: state.config.data_dir.clone(),
    };
    drop(entry);
    state.sessions.lock().expect("registry lock").insert(session_id.clone(), live);
    driver.spawn();
    tracing::info!(session = %session_id, "session opened");
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session_id, "index": index }))))
}

async fn session_events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let live = state.session(&id)?;
    let resume = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok());
    let from = query.from.or(resume).unwrap_or(0);
    Ok(Sse::new(event_stream(Arc::clone(&live.log), from)).keep_alive(KeepAlive::default()))
}

async fn post_utterance(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PostUtterance>,
) -> Result<impl IntoResponse, ApiError> {
    let live = state.session(&id)?;
    let rx = live.post(body.speaker.as_ref(), body.text, body.introduce)?;
    let turn = rx.await.map_err(|_| ApiError::SessionClosed)??;
    Ok(Json(json!({ "turn": turn })))
}

async fn close(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let live = state.session(&id)?;
    let report = match live.request_close() {
        Ok(report) => report,
        Err(rx) => rx.await.map_err(|_| ApiError::SessionClosed)?,
    };
    Ok(Json(report))
}

async fn session_status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.session(&id)?.status()))
}

async fn get_episode(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = state.episode(&id)?;
    let entry = entry.lock().expect("episode lock");
    Ok(Json(json!({
        "episode": entry.episode,
        "active_session": entry.active,
        "sessions_planned": entry.scenario.sessions.len(),
    })))
}

async fn get_memory(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = state.episode(&id)?;
    let json = entry.lock().expect("episode lock").graph.to_json();
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], json))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({ "ok": true })) }))
        .route("/episodes", post(create_episode))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/memory", get(get_memory))
        .route("/episodes/{id}/sessions", post(open_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/close", post(close))
        .with_state(state)
}

/// Builds the state on the calling thread, then serves until the process
/// is stopped.
pub fn serve(config: ServerConfig, port: u16) -> Result<(), ServeError> {
    let state = AppState::new(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
