//! JSON HTTP API over [`SessionService`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | `{"profile_id"}` |
//! | POST | `/sessions/{id}/messages` | `{"text"}` |
//! | GET | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/feedback` | |
//! | GET | `/sessions/{id}/instructor` | |
//! | GET | `/profiles` | |
//!
//! Stage, scores and gate verdicts are left out of trainee payloads unless
//! `session.expose_stage_to_trainee` is set or the request carries
//! `?view=instructor`. Errors are `{"error":{"kind","message"}}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{SessionError, SessionService, TurnResult};
use crate::classifier::ClassificationResult;

#[derive(Clone)]
struct AppState {
    service: Arc<SessionService>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub profile_id: String,
}

#[derive(Debug, Deserialize)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct ViewQuery {
    pub view: Option<String>,
}

impl ViewQuery {
    fn instructor(&self) -> bool {
        self.view.as_deref() == Some("instructor")
    }
}

/// Turn payload for trainees: a [`TurnResult`] without the progression
/// decision and without the client's internal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraineeTurn {
    pub session_id: String,
    pub turn: u32,
    pub reply: TraineeReply,
    pub skills: ClassificationResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraineeReply {
    pub message: String,
}

impl From<&TurnResult> for TraineeTurn {
    fn from(r: &TurnResult) -> Self {
        Self {
            session_id: r.session_id.clone(),
            turn: r.turn,
            reply: TraineeReply { message: r.reply.message.clone() },
            skills: r.skills.clone(),
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownProfile(_) | SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::SessionBusy(_) => StatusCode::CONFLICT,
            SessionError::TurnFailed(_) => StatusCode::BAD_GATEWAY,
            SessionError::EmptyMessage => StatusCode::BAD_REQUEST,
            SessionError::Storage(_) | SessionError::Replay(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Builds the router. With `token` set, every request needs
/// `Authorization: Bearer <token>`.
pub fn router(service: Arc<SessionService>, token: Option<String>) -> Router {
    let state = AppState { service, token: token.filter(|t| !t.is_empty()).map(Arc::from) };
    Router::new()
        .route("/profiles", get(list_profiles))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/feedback", get(feedback))
        .route("/sessions/{id}/instructor", get(instructor))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<SessionService>, bind: &str, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, auth = token.is_some(), "listening");
    axum::serve(listener, router(service, token)).await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(request).await
}

fn exposes_stage(state: &AppState, query: &ViewQuery) -> bool {
    query.instructor() || state.service.config().session.expose_stage_to_trainee
}

async fn list_profiles(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "profiles": state.service.profiles() }))
}

async fn create_session(
    State(state): State<AppState>,
    Query(query): Query<ViewQuery>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<super::SessionView>), ApiError> {
    let Json(body) = body?;
    let service = state.service.clone();
    let created = tokio::task::spawn_blocking(move || service.create_session(&body.profile_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let view = state.service.view(&created.id, exposes_stage(&state, &query))?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ViewQuery>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let Json(body) = body?;
    let service = state.service.clone();
    let result = tokio::task::spawn_blocking(move || service.post_message(&id, &body.text))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let payload = if exposes_stage(&state, &query) {
        serde_json::to_value(&result)
    } else {
        serde_json::to_value(TraineeTurn::from(&result))
    };
    payload.map(Json).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ViewQuery>,
) -> ApiResult<super::SessionView> {
    Ok(Json(state.service.view(&id, exposes_stage(&state, &query))?))
}

async fn feedback(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<super::FeedbackSummary> {
    Ok(Json(state.service.feedback_report(&id)?))
}

async fn instructor(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<super::InstructorView> {
    Ok(Json(state.service.instructor_view(&id)?))
}
