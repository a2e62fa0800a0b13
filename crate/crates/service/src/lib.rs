//! JSON-over-HTTP sessions around the live pipeline.
//!
//! Routes: `POST /api/chat`, `GET`/`DELETE /api/session/{id}`, `GET /api/health`.
//! Sessions live in memory and are evicted after a period of inactivity.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use proactive_switch::corpus::{DomainLabel, Mode, SlotLabel, Turn};
use proactive_switch::pipeline::{Pipeline, SessionState, StepOutput};
use proactive_switch::tie::{TieOutput, TransitionInfo};
use proactive_switch::tsg::ResponseMode;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

/// What the service needs from a loaded model pair.
pub trait ChatEngine: Send + Sync + 'static {
    fn step(&self, state: &mut SessionState, text: &str) -> proactive_switch::Result<StepOutput>;
    fn hashes(&self) -> BTreeMap<String, String>;
}

impl ChatEngine for Pipeline {
    fn step(&self, state: &mut SessionState, text: &str) -> proactive_switch::Result<StepOutput> {
        Pipeline::step(self, state, text)
    }

    fn hashes(&self) -> BTreeMap<String, String> {
        Pipeline::hashes(self)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatMessage {
    pub session_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    pub domain: BTreeMap<String, f64>,
    pub slot: BTreeMap<String, f64>,
    pub consistent: bool,
}

impl Diagnostics {
    fn from_output(out: &TieOutput) -> Self {
        let named = |probs: &[f64], name: &dyn Fn(usize) -> Option<String>| {
            probs
                .iter()
                .enumerate()
                .filter_map(|(i, &p)| name(i).map(|n| (n, p)))
                .collect()
        };
        Self {
            domain: named(&out.domain_probs, &|i| DomainLabel::from_index(i).map(|d| d.to_string())),
            slot: named(&out.slot_probs, &|i| SlotLabel::from_index(i).map(|s| s.to_string())),
            consistent: out.consistent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatReply {
    pub session_id: String,
    pub response: String,
    pub transition_sentence: Option<String>,
    pub info: TransitionInfo,
    pub mode: ResponseMode,
    pub turn_index: usize,
    pub prompt: Option<String>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub session_id: String,
    pub history: Vec<Turn>,
    pub mode: Mode,
    pub transitioned: bool,
    pub last_tie: Option<TieOutput>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
    pub hashes: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Slot {
    busy: AtomicBool,
    state: Mutex<SessionState>,
    touched: Mutex<Instant>,
}

/// Clears the busy flag when the request finishes or is dropped.
struct BusyGuard(Arc<Slot>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<RwLock<Option<Arc<dyn ChatEngine>>>>,
    sessions: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
    ttl: Duration,
}

impl AppState {
    pub fn new(engine: Option<Arc<dyn ChatEngine>>, ttl: Duration) -> Self {
        Self {
            engine: Arc::new(RwLock::new(engine)),
            sessions: Arc::new(Mutex::new(HashMap::new())),
            ttl,
        }
    }

    pub fn set_engine(&self, engine: Arc<dyn ChatEngine>) {
        *self.engine.write().expect("engine lock") = Some(engine);
    }

    fn engine(&self) -> ApiResult<Arc<dyn ChatEngine>> {
        self.engine
            .read()
            .expect("engine lock")
            .clone()
            .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "models not loaded".into()))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    /// Drop sessions idle for longer than the TTL, except those mid-request.
    pub fn evict_expired(&self) {
        let now = Instant::now();
        self.sessions.lock().expect("session lock").retain(|_, s| {
            s.busy.load(Ordering::Acquire) || now.duration_since(*s.touched.lock().expect("touch lock")) < self.ttl
        });
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.evict_expired();
        self.sessions.lock().expect("session lock").get(id).cloned()
    }

    fn slot_or_create(&self, id: &str) -> Arc<Slot> {
        self.evict_expired();
        self.sessions
            .lock()
            .expect("session lock")
            .entry(id.to_string())
            .or_insert_with(|| {
                Arc::new(Slot {
                    busy: AtomicBool::new(false),
                    state: Mutex::new(SessionState::new(id)),
                    touched: Mutex::new(Instant::now()),
                })
            })
            .clone()
    }
}

async fn chat(State(app): State<AppState>, body: Bytes) -> ApiResult<Json<ChatReply>> {
    let msg: ChatMessage =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    if msg.session_id.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "session_id must not be empty".into()));
    }
    if msg.text.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "text must not be empty".into()));
    }
    let engine = app.engine()?;
    let slot = app.slot_or_create(&msg.session_id);
    if slot
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError(StatusCode::CONFLICT, "a request for this session is in progress".into()));
    }
    let guard = BusyGuard(slot);
    let result = tokio::task::spawn_blocking(move || {
        let slot = &guard.0;
        let mut state = slot.state.lock().expect("state lock");
        let out = engine.step(&mut state, &msg.text);
        *slot.touched.lock().expect("touch lock") = Instant::now();
        // keep the busy flag held until the state lock is released
        drop(state);
        drop(guard);
        out.map(|o| (msg.session_id, o))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (session_id, out) = result.map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(ChatReply {
        session_id,
        diagnostics: out.tie.as_ref().map(Diagnostics::from_output),
        response: out.response,
        transition_sentence: out.transition_sentence,
        info: out.info,
        mode: out.mode,
        turn_index: out.turn_index,
        prompt: out.prompt,
    }))
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let slot = app.slot(&id).ok_or_else(|| not_found(&id))?;
    let s = slot.state.lock().expect("state lock").clone();
    Ok(Json(SessionView {
        session_id: s.id,
        history: s.history,
        mode: s.mode,
        transitioned: s.transitioned,
        last_tie: s.last_tie,
    }))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.evict_expired();
    match app.sessions.lock().expect("session lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(&id)),
    }
}

async fn health(State(app): State<AppState>) -> ApiResult<Json<Health>> {
    let engine = app.engine()?;
    app.evict_expired();
    Ok(Json(Health {
        status: "ok".into(),
        sessions: app.session_count(),
        hashes: engine.hashes(),
    }))
}

/// `cors_origins` empty allows any origin.
pub fn router(app: AppState, cors_origins: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = if origins.is_empty() {
        cors.allow_origin(Any)
    } else {
        cors.allow_origin(AllowOrigin::list(origins))
    };
    Router::new()
        .route("/api/chat", post(chat))
        .route("/api/session/{id}", get(get_session).delete(delete_session))
        .route("/api/health", get(health))
        .layer(cors)
        .with_state(app)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub cors_origins: Vec<String>,
}

/// Bind and serve until the process is stopped. Sessions are swept once a minute.
/// Models may be installed later through [`AppState::set_engine`]; until then requests get 503.
pub async fn serve(app: AppState, cfg: ServeConfig) -> std::io::Result<()> {
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.evict_expired();
        }
    });
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(app, &cfg.cors_origins)).await
}
