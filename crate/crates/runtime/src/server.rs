//! REST and websocket endpoints over the [`Hub`].
//!
//! | route | |
//! |---|---|
//! | `GET /api/health` | static agent list |
//! | `GET /api/anomalies/recent?n=&anomalous_only=` | last `n` predictions, oldest first |
//! | `GET /api/explain/{id}` | explanation of one recent prediction |
//! | `GET /api/forecast?product=` | latest forecast of a product, or all |
//! | `POST /api/ask {query}` | InfoGuide answer |
//! | `POST /api/facility {name, manuals_dir, ontology_path}` | switch facility |
//! | `GET /ws/live` | `{kind, payload}` events |
//!
//! Errors are `{code, message}` with a 4xx or 5xx status.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use smartpilot_core::infoguide::{answer, build_index, load_manuals, Answer, GeneratorClient, InfoGuideConfig, KeywordSet};
use smartpilot_core::ontology::load_ontology_file;

use crate::hub::{Facility, Hub};
use crate::RuntimeError;

pub const AGENTS: [&str; 3] = ["predictx", "foresight", "infoguide"];
pub const DEFAULT_RECENT_N: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            status: status.as_u16(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Everything a request handler may read.
#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub keywords: Arc<KeywordSet>,
    pub info: Arc<InfoGuideConfig>,
    pub client: Option<Arc<dyn GeneratorClient>>,
    latencies: Arc<Mutex<Vec<f64>>>,
}

impl AppState {
    pub fn new(
        hub: Arc<Hub>,
        keywords: KeywordSet,
        info: InfoGuideConfig,
        client: Option<Arc<dyn GeneratorClient>>,
    ) -> Self {
        Self {
            hub,
            keywords: Arc::new(keywords),
            info: Arc::new(info),
            client,
            latencies: Arc::default(),
        }
    }

    /// Latency of every answered `/api/ask` request, in ms.
    pub fn ask_latencies(&self) -> Vec<f64> {
        self.latencies.lock().expect("latency lock").clone()
    }
}

#[derive(Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub agents: Vec<String>,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        agents: AGENTS.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Deserialize)]
struct RecentParams {
    n: Option<usize>,
    #[serde(default)]
    anomalous_only: bool,
}

async fn recent(
    State(s): State<AppState>,
    q: Result<Query<RecentParams>, QueryRejection>,
) -> ApiResult<Vec<smartpilot_core::predictx::PredictionResult>> {
    let Query(q) = q?;
    let n = q.n.unwrap_or(DEFAULT_RECENT_N);
    let mut all = s.hub.recent(usize::MAX);
    if q.anomalous_only {
        all.retain(|p| p.predicted_class.is_anomalous());
    }
    Ok(Json(all.split_off(all.len().saturating_sub(n))))
}

#[derive(Serialize, Deserialize)]
pub struct ExplainResponse {
    pub prediction_id: u64,
    pub predicted_class: smartpilot_core::predictx::AnomalyClass,
    pub explanation: smartpilot_core::ontology::Explanation,
    pub text: String,
}

async fn explain(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<ExplainResponse> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("prediction id '{id}' is not a number")))?;
    let p = s
        .hub
        .prediction(id)
        .ok_or_else(|| ApiError::not_found(format!("no recent prediction {id}")))?;
    let e = p
        .explanation
        .ok_or_else(|| ApiError::not_found(format!("prediction {id} has no explanation")))?;
    Ok(Json(ExplainResponse {
        prediction_id: id,
        predicted_class: p.predicted_class,
        text: e.to_text(),
        explanation: e,
    }))
}

#[derive(Deserialize)]
struct ForecastParams {
    product: Option<String>,
}

async fn forecast(State(s): State<AppState>, q: Result<Query<ForecastParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = q?;
    Ok(match q.product {
        None => Json(s.hub.forecasts()).into_response(),
        Some(p) => Json(
            s.hub
                .forecast(&p)
                .ok_or_else(|| ApiError::not_found(format!("no forecast for product '{p}'")))?,
        )
        .into_response(),
    })
}

#[derive(Serialize, Deserialize)]
pub struct AskRequest {
    pub query: String,
}

async fn ask(State(s): State<AppState>, body: Result<Json<AskRequest>, JsonRejection>) -> ApiResult<Answer> {
    let Json(req) = body?;
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query is empty"));
    }
    let st = s.clone();
    let a = tokio::task::spawn_blocking(move || {
        let live = st.hub.live.load();
        let index = st.hub.facility().index.clone();
        answer(&req.query, &index, &st.info, st.client.as_deref(), Some(&live))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    log::info!("ask answered in {:.2} ms ({:?})", a.latency_ms, a.status);
    s.latencies.lock().expect("latency lock").push(a.latency_ms);
    Ok(Json(a))
}

#[derive(Serialize, Deserialize)]
pub struct FacilityRequest {
    pub name: String,
    pub manuals_dir: PathBuf,
    pub ontology_path: PathBuf,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FacilityInfo {
    pub name: String,
    pub manuals: usize,
    pub chunks: usize,
    pub contexts: usize,
    pub states: usize,
}

/// Loads a facility's manuals and ontology.
pub fn load_facility(
    req: &FacilityRequest,
    keywords: &KeywordSet,
    info: &InfoGuideConfig,
    client: Option<&dyn GeneratorClient>,
) -> Result<Facility, RuntimeError> {
    if req.name.trim().is_empty() {
        return Err(RuntimeError::Facility("facility name is empty".into()));
    }
    let fail = |what: &str, e: String| RuntimeError::Facility(format!("{what}: {e}"));
    let manuals = load_manuals(&req.manuals_dir).map_err(|e| fail(&req.manuals_dir.display().to_string(), e.to_string()))?;
    if manuals.is_empty() {
        return Err(RuntimeError::Facility(format!("no manuals in {}", req.manuals_dir.display())));
    }
    let index = build_index(&manuals, keywords, client, info).map_err(|e| fail("index", e.to_string()))?;
    let ontology =
        load_ontology_file(&req.ontology_path).map_err(|e| fail(&req.ontology_path.display().to_string(), e.to_string()))?;
    Ok(Facility {
        name: req.name.clone(),
        ontology: Arc::new(ontology),
        index: Arc::new(index),
        manuals: manuals.len(),
    })
}

fn facility_info(f: &Facility) -> FacilityInfo {
    FacilityInfo {
        name: f.name.clone(),
        manuals: f.manuals,
        chunks: f.index.chunk_count,
        contexts: f.index.len(),
        states: f.ontology.states().len(),
    }
}

async fn get_facility(State(s): State<AppState>) -> Json<FacilityInfo> {
    Json(facility_info(&s.hub.facility()))
}

async fn set_facility(
    State(s): State<AppState>,
    body: Result<Json<FacilityRequest>, JsonRejection>,
) -> ApiResult<FacilityInfo> {
    let Json(req) = body?;
    let st = s.clone();
    let f = tokio::task::spawn_blocking(move || load_facility(&req, &st.keywords, &st.info, st.client.as_deref()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_facility", e.to_string()))?;
    let info = facility_info(&f);
    s.hub.set_facility(f);
    log::info!("active facility is now '{}'", info.name);
    Ok(Json(info))
}

async fn live(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream_events(socket, s))
}

async fn stream_events(mut socket: WebSocket, s: AppState) {
    let mut events = s.hub.subscribe_events();
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Ok(ev) => {
                    let text = serde_json::to_string(&ev).expect("event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => log::warn!("live client lagged, {n} events skipped"),
                Err(RecvError::Closed) => return,
            },
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/anomalies/recent", get(recent))
        .route("/api/explain/{id}", get(explain))
        .route("/api/forecast", get(forecast))
        .route("/api/ask", post(ask))
        .route("/api/facility", get(get_facility).post(set_facility))
        .route("/ws/live", get(live))
        .fallback(fallback)
        .with_state(state)
}

/// Binds `addr`; a busy port is a startup error.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, RuntimeError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| RuntimeError::Bind(format!("{addr}: {e}")))
}

/// Serves until the process ends.
pub async fn serve(listener: TcpListener, state: AppState) -> Result<(), RuntimeError> {
    if let Ok(a) = listener.local_addr() {
        log::info!("serving on http://{a}");
    }
    axum::serve(listener, router(state))
        .await
        .map_err(|e| RuntimeError::Io(e.to_string()))
}
