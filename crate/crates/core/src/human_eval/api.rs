use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{CreateSession, HumanEvalError, JudgmentSubmission, SessionService, SurveySubmission};

impl IntoResponse for HumanEvalError {
    fn into_response(self) -> Response {
        let status = match &self {
            HumanEvalError::UnknownSession(_) => StatusCode::NOT_FOUND,
            HumanEvalError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            HumanEvalError::SessionClosed(_)
            | HumanEvalError::DuplicateSubmission(_)
            | HumanEvalError::SessionIncomplete { .. }
            | HumanEvalError::IncompleteJudgments(_) => StatusCode::CONFLICT,
            HumanEvalError::InvalidDifficulty(_) | HumanEvalError::InvalidSession(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let HumanEvalError::IncompleteJudgments(missing) = &self {
            body["missing"] = json!(missing);
        }
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<SessionService>;

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

async fn create(State(svc): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, HumanEvalError> {
    let id = svc.create_session(req)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn list(State(svc): State<Shared>) -> Response {
    Json(json!({ "sessions": svc.session_ids() })).into_response()
}

async fn next_item(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Response, HumanEvalError> {
    Ok(Json(svc.next_item(&id, &q.annotator)?).into_response())
}

async fn judgment(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(sub): Json<JudgmentSubmission>,
) -> Result<Response, HumanEvalError> {
    Ok(Json(svc.record_judgment(&id, sub)?).into_response())
}

async fn survey(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(sub): Json<SurveySubmission>,
) -> Result<Response, HumanEvalError> {
    Ok(Json(svc.submit_survey(&id, sub)?).into_response())
}

async fn close(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, HumanEvalError> {
    svc.close_session(&id)?;
    Ok(Json(json!({ "session_id": id, "closed": true })).into_response())
}

async fn report(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, HumanEvalError> {
    Ok(Json(svc.report(&id)?).into_response())
}

fn csv(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn annotations_csv(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, HumanEvalError> {
    Ok(csv(svc.annotations_csv(&id)?))
}

async fn surveys_csv(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, HumanEvalError> {
    Ok(csv(svc.surveys_csv(&id)?))
}

/// JSON API consumed by the annotation front end.
pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/next-item", get(next_item))
        .route("/sessions/{id}/judgments", post(judgment))
        .route("/sessions/{id}/survey", post(survey))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/annotations.csv", get(annotations_csv))
        .route("/sessions/{id}/surveys.csv", get(surveys_csv))
        .with_state(service)
}
/// Serves the annotation API on `addr` until the process stops.
pub async fn serve(service: Arc<SessionService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(service)).await
}

