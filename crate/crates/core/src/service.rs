//! HTTP+JSON service exposing live sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/sessions` | `{prompt, seed?, target?}` → 201 |
//! | GET | `/api/sessions/{id}` | current state |
//! | POST | `/api/sessions/{id}/edits` | `{edit, use_injection?}` |
//! | GET | `/api/sessions/{id}/suggestions` | proposals with policy probabilities |
//! | POST | `/api/sessions/{id}/accept` | user acceptance |
//!
//! Sessions live in memory and are dropped after an idle period. When a log
//! directory is configured, sessions are written there as they reach a
//! terminal status; active sessions are lost on restart.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::error::Error;
use crate::generator::{encode_png, ToyImage};
use crate::prompt::{tokenize, EditOp, EditSpec};
use crate::rl::{LinearPolicy, Strategy};
use crate::session::{
    heuristic_proposals, propose_edits, save_session, start_session, step_round, Engine,
    SessionRecord, SessionState, SimulatedUser, Status,
};

pub const DEFAULT_IDLE: Duration = Duration::from_secs(30 * 60);

struct LiveSession {
    state: SessionState,
    user: Option<SimulatedUser>,
    saved: bool,
}

struct Entry {
    session: Arc<Mutex<LiveSession>>,
    last_active: StdMutex<Instant>,
}

impl Entry {
    fn touch(&self) {
        *self.last_active.lock().expect("timestamp lock") = Instant::now();
    }
}

/// Shared service state: engine, policy snapshot and the session table.
pub struct AppState {
    engine: Engine,
    policy: Arc<LinearPolicy>,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    next_id: AtomicU64,
    idle: Duration,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Engine, policy: LinearPolicy) -> Self {
        Self {
            engine,
            policy: Arc::new(policy),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            idle: DEFAULT_IDLE,
            log_dir: None,
        }
    }

    pub fn with_idle(mut self, idle: Duration) -> Self {
        self.idle = idle;
        self
    }

    pub fn with_log_dir(mut self, dir: PathBuf) -> Self {
        self.log_dir = Some(dir);
        self
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table").len()
    }

    /// Drops sessions idle for longer than the configured period.
    pub fn evict_idle(&self) -> usize {
        let now = Instant::now();
        let mut table = self.sessions.write().expect("session table");
        let before = table.len();
        table.retain(|_, e| now.duration_since(*e.last_active.lock().expect("timestamp lock")) <= self.idle);
        before - table.len()
    }

    fn lookup(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        let entry = self
            .sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
        entry.touch();
        Ok(entry)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidPrompt(_) | Error::InvalidEdit(_) | Error::OutOfRange { .. } | Error::EmptyInput(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::SessionClosed(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub prompt: String,
    #[serde(default)]
    pub seed: u64,
    /// Optional target prompt; enables target-driven suggestions and scoring.
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    pub edit: EditSpec,
    #[serde(default = "default_true")]
    pub use_injection: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize)]
pub struct TokenAttention {
    pub token: String,
    pub weight: f64,
    pub heatmap: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct AttentionPayload {
    pub grid_height: usize,
    pub grid_width: usize,
    pub tokens: Vec<TokenAttention>,
}

#[derive(Debug, Serialize)]
pub struct SessionPayload {
    pub id: String,
    pub round: usize,
    pub status: Status,
    pub prompt: String,
    pub image: ToyImage,
    pub image_png: String,
    pub attention: AttentionPayload,
    pub clip_score: f64,
    pub rewards: Vec<f64>,
}

fn payload(state: &SessionState) -> Result<SessionPayload, ApiError> {
    let png = encode_png(&state.image)?;
    let heatmaps = state.stack.token_heatmaps();
    let tokens = state
        .prompt
        .tokens()
        .iter()
        .zip(state.prompt.weights())
        .zip(heatmaps)
        .map(|((t, &w), heatmap)| TokenAttention {
            token: t.surface.clone(),
            weight: w,
            heatmap,
        })
        .collect();
    Ok(SessionPayload {
        id: state.id.clone(),
        round: state.round,
        status: state.status,
        prompt: state.prompt.to_string(),
        image: state.image.clone(),
        image_png: format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        ),
        attention: AttentionPayload {
            grid_height: state.stack.grid_height,
            grid_width: state.stack.grid_width,
            tokens,
        },
        clip_score: state.last_reward(),
        rewards: state.rewards.clone(),
    })
}

#[derive(Debug, Serialize)]
pub struct Suggestion {
    pub strategy: Strategy,
    pub probability: f64,
    pub edit: EditSpec,
}

#[derive(Debug, Serialize)]
pub struct SuggestionsPayload {
    pub id: String,
    pub probabilities: HashMap<Strategy, f64>,
    pub suggestions: Vec<Suggestion>,
}

fn strategy_of(e: &EditOp) -> Strategy {
    match e {
        EditOp::WordSwap { .. } => Strategy::WordSwap,
        EditOp::AddPhrase { .. } => Strategy::AddPhrase,
        EditOp::Reweight { .. } => Strategy::Reweight,
    }
}

fn persist(app: &AppState, live: &mut LiveSession) -> Result<(), ApiError> {
    let (Some(dir), false) = (&app.log_dir, live.saved) else {
        return Ok(());
    };
    if !live.state.status.is_terminal() {
        return Ok(());
    }
    let target = live.user.as_ref().map(|u| (&u.target, &u.target_image));
    save_session(&SessionRecord::from_state(&live.state, target), dir)?;
    live.saved = true;
    Ok(())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionPayload>), ApiError> {
    let app2 = app.clone();
    let (live, body) = blocking(move || {
        let engine = &app2.engine;
        let prompt = tokenize(&body.prompt, &engine.vocab)?;
        let user = match &body.target {
            Some(t) => Some(SimulatedUser::new(tokenize(t, &engine.vocab)?, &engine.generator)?),
            None => None,
        };
        let n = app2.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("sess-{n:06}");
        let intent = user.as_ref().map(|u| u.target.clone());
        let state = start_session(id, prompt, intent, body.seed, engine)?;
        let body = payload(&state)?;
        Ok((
            LiveSession {
                state,
                user,
                saved: false,
            },
            body,
        ))
    })
    .await?;
    let entry = Arc::new(Entry {
        session: Arc::new(Mutex::new(live)),
        last_active: StdMutex::new(Instant::now()),
    });
    app.sessions
        .write()
        .expect("session table")
        .insert(body.id.clone(), entry);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionPayload>, ApiError> {
    let entry = app.lookup(&id)?;
    let live = entry.session.lock().await;
    Ok(Json(payload(&live.state)?))
}

async fn post_edit(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<EditRequest>,
) -> Result<Json<SessionPayload>, ApiError> {
    let entry = app.lookup(&id)?;
    let mut live = entry.session.clone().lock_owned().await;
    if live.state.status.is_terminal() {
        return Err(Error::SessionClosed(id).into());
    }
    let out = blocking(move || {
        let edit = body.edit.resolve(&app.engine.vocab);
        live.state = step_round(&live.state, &edit, body.use_injection, &app.engine)?;
        persist(&app, &mut live)?;
        payload(&live.state)
    })
    .await?;
    Ok(Json(out))
}

async fn get_suggestions(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SuggestionsPayload>, ApiError> {
    let entry = app.lookup(&id)?;
    let live = entry.session.lock().await;
    let probs = app
        .policy
        .probabilities(&live.state.features(app.engine.session.n_max)?);
    let proposals = match &live.user {
        Some(user) => propose_edits(user, &live.state),
        None => heuristic_proposals(&live.state),
    };
    let mut suggestions: Vec<Suggestion> = proposals
        .iter()
        .map(|e| {
            let strategy = strategy_of(e);
            Suggestion {
                strategy,
                probability: probs[strategy.index()],
                edit: e.to_spec(),
            }
        })
        .collect();
    suggestions.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    Ok(Json(SuggestionsPayload {
        id,
        probabilities: Strategy::ALL.iter().map(|s| (*s, probs[s.index()])).collect(),
        suggestions,
    }))
}

async fn post_accept(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionPayload>, ApiError> {
    let entry = app.lookup(&id)?;
    let mut live = entry.session.lock().await;
    live.state.accept()?;
    persist(&app, &mut live)?;
    Ok(Json(payload(&live.state)?))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/edits", post(post_edit))
        .route("/api/sessions/{id}/suggestions", get(get_suggestions))
        .route("/api/sessions/{id}/accept", post(post_accept))
        .with_state(app)
}

/// Serves until Ctrl-C, evicting idle sessions once a minute.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.evict_idle();
        }
    });
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Config(format!("server error: {e}")))
}
