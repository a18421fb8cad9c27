//! HTTP and WebSocket front end for interactive teaching sessions.
//!
//! Each session is bound to a (task, model) pair drawn by the blind sampler.
//! Clients only ever see the blind tag; the real model id goes to the
//! dataset file when the session is labeled.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use lmpc::controller::{Frame, PlanParams, Termination};
use lmpc::data::{append_session, Provenance};
use lmpc::dsl::parse_and_compile;
use lmpc::experiment::ModelPool;
use lmpc::session::{ChatSession, Outcome, Rating, MAX_TURNS};
use lmpc::task::{sample_task, system_prompt, SampledPair, SamplerConfig, Task, TaskRegistry};
use lmpc::teacher::{execute_turn, turn_plan_params, TurnContext};
use lmpc::util::{derive_seed, rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingMessage,
    AwaitingRunOrRate,
    Closed,
}

pub struct ServiceConfig {
    pub seed: u64,
    pub registry: TaskRegistry,
    /// Tasks offered by `POST /sessions` when no filter is given.
    pub tasks: Vec<Task>,
    pub pool: ModelPool,
    pub plan: PlanParams,
    /// Labeled sessions are appended here.
    pub dataset_path: PathBuf,
}

struct LiveSession {
    pair: SampledPair,
    session: ChatSession,
    state: SessionState,
    policy_rng: Rng,
}

struct Shared {
    cfg: ServiceConfig,
    sampler_rng: StdMutex<Rng>,
    next_id: StdMutex<usize>,
    sessions: StdMutex<BTreeMap<String, Arc<Mutex<LiveSession>>>>,
    dataset_lock: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        let rng = rng_from_seed(derive_seed(cfg.seed, 0x5E));
        AppState(Arc::new(Shared {
            cfg,
            sampler_rng: StdMutex::new(rng),
            next_id: StdMutex::new(0),
            sessions: StdMutex::new(BTreeMap::new()),
            dataset_lock: Mutex::new(()),
        }))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.0
            .sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`")))
    }
}

/// Error body: `{"error": <code>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn wrong_state(s: SessionState) -> Self {
        if s == SessionState::Closed {
            return Self::new(StatusCode::CONFLICT, "SessionClosed", "the session is already labeled");
        }
        Self::new(StatusCode::CONFLICT, "WrongState", format!("not allowed while {}", state_name(s)))
    }
}

fn state_name(s: SessionState) -> &'static str {
    match s {
        SessionState::AwaitingMessage => "awaiting_message",
        SessionState::AwaitingRunOrRate => "awaiting_run_or_rate",
        SessionState::Closed => "closed",
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code.into(), message: self.message })).into_response()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateRequest {
    /// Exact task id.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub embodiment: Option<String>,
    #[serde(default)]
    pub user_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub instruction: String,
    pub embodiment: String,
    pub model_tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_index: usize,
    pub human_text: String,
    pub robot_code: String,
    pub rating: Rating,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    pub instruction: String,
    pub embodiment: String,
    pub model_tag: String,
    pub turns: Vec<TurnView>,
    pub outcome: Outcome,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageResponse {
    pub robot_code: String,
    pub turn_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RateRequest {
    pub turn_index: usize,
    pub rating: Rating,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub outcome: Outcome,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    pub state: SessionState,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub turn_index: usize,
    pub steps: usize,
    pub termination: Option<Termination>,
    /// Remaining error of each goal at the final state.
    pub goal_errors: Vec<f64>,
    pub error: Option<String>,
}

/// One message of a run: a frame, an error, or the closing summary.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunRecord {
    Frame(Frame),
    Error { message: String },
    Summary(RunSummary),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub id: String,
    pub embodiment: String,
    pub split: String,
    pub instruction: String,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/run", post(run_code))
        .route("/sessions/{id}/rate", post(rate_turn))
        .route("/sessions/{id}/label", post(label_session))
        .route("/sessions/{id}/frames", get(frames_ws))
        .route("/tasks", get(list_tasks))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(app): State<AppState>,
    body: Option<Json<CreateRequest>>,
) -> Result<Json<CreateResponse>, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let cfg = &app.0.cfg;
    let tasks: Vec<Task> = match (&req.task, &req.embodiment) {
        (Some(id), _) => cfg.registry.get(id).cloned().into_iter().collect(),
        (None, Some(e)) => cfg.tasks.iter().filter(|t| &t.embodiment == e).cloned().collect(),
        (None, None) => cfg.tasks.clone(),
    };
    if tasks.is_empty() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "NoMatchingTask", "no task matches the filter"));
    }
    let sc = SamplerConfig { model_ids: cfg.pool.ids(), tasks, seed: cfg.seed };
    let pair = {
        let mut rng = app.0.sampler_rng.lock().expect("sampler lock");
        sample_task(&sc, &mut rng)
            .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NoModels", e.to_string()))?
    };
    let id = {
        let mut n = app.0.next_id.lock().expect("id lock");
        *n += 1;
        format!("live-{:05}", *n - 1)
    };
    let inst = &pair.instance;
    let session = ChatSession::new(
        &id,
        system_prompt(&inst.initial.layout),
        req.user_id.clone().unwrap_or_else(|| "anonymous".into()),
        &inst.task.id,
        &inst.task.embodiment,
    );
    let resp = CreateResponse {
        session_id: id.clone(),
        instruction: inst.instruction(),
        embodiment: inst.task.embodiment.clone(),
        model_tag: pair.blind_tag.clone(),
    };
    let policy_rng = rng_from_seed(derive_seed(inst.seed, 2));
    let live = LiveSession { pair, session, state: SessionState::AwaitingMessage, policy_rng };
    app.0.sessions.lock().expect("session map lock").insert(id, Arc::new(Mutex::new(live)));
    Ok(Json(resp))
}

fn view(id: &str, s: &LiveSession) -> SessionView {
    SessionView {
        session_id: id.to_owned(),
        state: s.state,
        instruction: s.pair.instance.instruction(),
        embodiment: s.pair.instance.task.embodiment.clone(),
        model_tag: s.pair.blind_tag.clone(),
        turns: s
            .session
            .turns
            .iter()
            .map(|t| TurnView {
                turn_index: t.turn_index,
                human_text: t.human_text.clone(),
                robot_code: t.robot_code.clone(),
                rating: t.rating,
            })
            .collect(),
        outcome: s.session.outcome,
    }
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(Json(view(&id, &s)))
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<Json<MessageResponse>, ApiError> {
    if req.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "EmptyMessage", "message text is empty"));
    }
    let handle = app.session(&id)?;
    let mut s = handle.lock().await;
    if s.state != SessionState::AwaitingMessage {
        return Err(ApiError::wrong_state(s.state));
    }
    if s.session.turns.len() >= MAX_TURNS {
        return Err(ApiError::new(StatusCode::CONFLICT, "MustLabel", format!("{MAX_TURNS} turns reached; label the session")));
    }
    let policy = app.0.cfg.pool.get(&s.pair.model_id).cloned().expect("sampled from the pool");
    let live = &mut *s;
    let code = {
        let prompt = live.session.system_prompt.clone();
        let ctx = TurnContext {
            instance: &live.pair.instance,
            system_prompt: &prompt,
            turns: &live.session.turns,
            pending_human: &req.text,
        };
        policy.respond(&ctx, &mut live.policy_rng).unwrap_or_default()
    };
    live.session.push_turn(req.text, code.clone(), Rating::Unrated);
    live.state = SessionState::AwaitingRunOrRate;
    Ok(Json(MessageResponse { robot_code: code, turn_index: live.session.turns.len() - 1 }))
}

/// Executes the latest turn's code. Deterministic for a given session.
fn run_records(s: &LiveSession, plan: &PlanParams) -> Vec<RunRecord> {
    let Some(turn) = s.session.turns.last() else {
        return vec![RunRecord::Error { message: "no code to run yet".into() }];
    };
    let inst = &s.pair.instance;
    let mut out = Vec::new();
    let compile_error = parse_and_compile(&turn.robot_code, &inst.initial.layout).err();
    let (traj, invalid) = execute_turn(inst, &turn.robot_code, &turn_plan_params(plan, inst.seed, turn.turn_index));
    let error = invalid.then(|| compile_error.unwrap_or_else(|| "the program failed to run".into()));
    if let Some(e) = &error {
        out.push(RunRecord::Error { message: e.clone() });
    }
    out.extend(traj.frames().into_iter().map(RunRecord::Frame));
    out.push(RunRecord::Summary(RunSummary {
        turn_index: turn.turn_index,
        steps: traj.steps(),
        termination: (!invalid).then_some(traj.termination),
        goal_errors: inst.goal_errors(traj.final_state()),
        error,
    }));
    out
}

async fn run_code(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<RunRecord>>, ApiError> {
    let handle = app.session(&id)?;
    let s = handle.lock().await;
    if s.state != SessionState::AwaitingRunOrRate {
        return Err(ApiError::wrong_state(s.state));
    }
    let plan = app.0.cfg.plan.clone();
    Ok(Json(run_records(&s, &plan)))
}

async fn frames_ws(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    {
        let s = handle.lock().await;
        if s.state != SessionState::AwaitingRunOrRate {
            return Err(ApiError::wrong_state(s.state));
        }
    }
    let plan = app.0.cfg.plan.clone();
    Ok(ws.on_upgrade(move |socket| stream_frames(socket, handle, plan)))
}

async fn stream_frames(mut socket: WebSocket, handle: Arc<Mutex<LiveSession>>, plan: PlanParams) {
    let records = {
        let s = handle.lock().await;
        run_records(&s, &plan)
    };
    for r in records {
        let text = serde_json::to_string(&r).expect("records serialize");
        if socket.send(Message::Text(text.into())).await.is_err() {
            return;
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn rate_turn(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RateRequest>,
) -> Result<Json<Ack>, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().await;
    if s.state == SessionState::Closed {
        return Err(ApiError::wrong_state(s.state));
    }
    if req.rating == Rating::Unrated {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadRating", "rating must be good or bad"));
    }
    let n = s.session.turns.len();
    let Some(t) = s.session.turns.get_mut(req.turn_index) else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "TurnOutOfRange",
            format!("turn {} does not exist ({n} turns)", req.turn_index),
        ));
    };
    t.rating = req.rating;
    s.state = SessionState::AwaitingMessage;
    Ok(Json(Ack { ok: true, state: s.state }))
}

async fn label_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Json<Ack>, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().await;
    if s.state == SessionState::Closed {
        return Err(ApiError::wrong_state(s.state));
    }
    if req.outcome == Outcome::Open {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadLabel", "label must be success or failure"));
    }
    if s.session.turns.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "NoTurns", "a session needs at least one turn to be labeled"));
    }
    let mut labeled = s.session.clone();
    labeled.outcome = req.outcome;
    let prov = Provenance {
        model_id: s.pair.model_id.clone(),
        seed: s.pair.instance.seed,
        timestamp: id.trim_start_matches("live-").parse().unwrap_or(0),
    };
    {
        let _guard = app.0.dataset_lock.lock().await;
        append_session(&app.0.cfg.dataset_path, &labeled, &prov)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "DatasetWrite", e.to_string()))?;
    }
    s.session = labeled;
    s.state = SessionState::Closed;
    Ok(Json(Ack { ok: true, state: s.state }))
}

async fn list_tasks(State(app): State<AppState>) -> Json<Vec<TaskView>> {
    Json(
        app.0
            .cfg
            .tasks
            .iter()
            .map(|t| TaskView {
                id: t.id.clone(),
                embodiment: t.embodiment.clone(),
                split: t.split.as_str().to_owned(),
                instruction: t.instruction().unwrap_or_default(),
            })
            .collect(),
    )
}
