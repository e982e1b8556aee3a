//! JSON-over-HTTP front-end of [`AnnotationService`].
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/api/tasks/next` | `?annotator=<id>&mode=blind\|suggested` |
//! | POST | `/api/annotations` | `{"task_id": ..., "record": AnnotationRecord}` |
//! | GET | `/api/progress` | |
//! | GET | `/api/reports/{corrections\|distribution\|influence}` | `?task=polarity\|aspect` |
//! | GET | `/api/docs/{id}` | |
//! | GET | `/api/taxonomy` | |
//!
//! Errors come back as `{"code": "E_...", "message": ...}`. The annotator may
//! also be given in the `x-annotator-id` header.

use std::path::Path;
use std::sync::Arc;

use annoprop::corpus::Taxonomy;
use annoprop::service::{AnnotationService, ErrorCode, ServiceError, TaskView};
use annoprop::{AnnotationRecord, Mode, Task};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Mutex<AnnotationService>>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(service: AnnotationService) -> Self {
        Self::with_clock(service, Arc::new(Utc::now))
    }

    pub fn with_clock(service: AnnotationService, clock: Clock) -> Self {
        Self {
            service: Arc::new(Mutex::new(service)),
            clock,
        }
    }
}

/// A [`ServiceError`] as an HTTP response.
#[derive(Debug)]
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

fn status_of(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::Lease => StatusCode::CONFLICT,
        ErrorCode::Span | ErrorCode::Label => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(self.0.code), Json(self.0)).into_response()
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(ServiceError::new(ErrorCode::BadRequest, message))
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: Option<String>,
    pub mode: Option<String>,
}

/// Answer of `GET /api/tasks/next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NextTask {
    Task { task: Box<TaskView> },
    NoTask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub task_id: String,
    pub record: AnnotationRecord,
}

#[derive(Debug, Deserialize)]
pub struct TaskQuery {
    pub task: Option<String>,
}

fn parse_mode(s: &str) -> Result<Mode, ApiError> {
    match s.to_ascii_lowercase().as_str() {
        "blind" => Ok(Mode::Blind),
        "suggested" => Ok(Mode::Suggested),
        other => Err(bad_request(format!("unknown mode `{other}`"))),
    }
}

fn parse_task(q: &TaskQuery) -> Result<Task, ApiError> {
    match &q.task {
        None => Ok(Task::Polarity),
        Some(t) => t.parse().map_err(|e: annoprop::Error| bad_request(e.to_string())),
    }
}

async fn next_task(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<NextQuery>,
) -> Result<Json<NextTask>, ApiError> {
    let annotator = q
        .annotator
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| bad_request("an annotator id is required"))?;
    let mode = q.mode.as_deref().map(parse_mode).transpose()?;
    let now = (state.clock)();
    let task = state.service.lock().next_task(&annotator, mode, now);
    Ok(Json(match task {
        Some(task) => NextTask::Task { task: Box::new(task) },
        None => NextTask::NoTask,
    }))
}

async fn submit(State(state): State<AppState>, Json(req): Json<SubmitRequest>) -> Result<Response, ApiError> {
    let now = (state.clock)();
    let ack = state.service.lock().submit(&req.task_id, req.record, now)?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn progress(State(state): State<AppState>) -> Response {
    let now = (state.clock)();
    Json(state.service.lock().progress(now)).into_response()
}

async fn report(
    State(state): State<AppState>,
    UrlPath(kind): UrlPath<String>,
    Query(q): Query<TaskQuery>,
) -> Result<Response, ApiError> {
    let task = parse_task(&q)?;
    let service = state.service.lock();
    Ok(match kind.as_str() {
        "corrections" => Json(service.corrections_report()).into_response(),
        "distribution" => Json(service.distribution_report(task)).into_response(),
        "influence" => Json(service.influence_report(task)?).into_response(),
        other => {
            return Err(ApiError(ServiceError::new(
                ErrorCode::NotFound,
                format!("unknown report `{other}`"),
            )))
        }
    })
}

async fn doc(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(state.service.lock().doc(&id)?).into_response())
}

async fn taxonomy(State(state): State<AppState>) -> Json<Taxonomy> {
    Json(state.service.lock().store().taxonomy().clone())
}

async fn api_not_found() -> ApiError {
    ApiError(ServiceError::new(ErrorCode::NotFound, "no such endpoint"))
}

/// The API routes, plus static files from `ui_dir` for every other path.
pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(submit))
        .route("/progress", get(progress))
        .route("/reports/{kind}", get(report))
        .route("/docs/{id}", get(doc))
        .route("/taxonomy", get(taxonomy))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api).with_state(state);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str, ui_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
