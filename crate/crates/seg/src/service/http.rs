//! HTTP transport for [`Engine`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Engine, Point, ServiceError};

const MAX_UPLOAD: usize = 32 * 1024 * 1024;

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::Decode(_) | ServiceError::UnknownTask { .. } | ServiceError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::NoModel { .. } | ServiceError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidPoint { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ServiceError::Decode(_) => "decode_error",
            ServiceError::UnknownTask { .. } => "unknown_task",
            ServiceError::NoModel { .. } => "no_model",
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::InvalidPoint { .. } => "invalid_point",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        match &self {
            ServiceError::UnknownTask { known, .. } => body["known_tasks"] = json!(known),
            ServiceError::NoModel { available, .. } => body["available_tasks"] = json!(available),
            ServiceError::InvalidPoint { index, .. } => body["index"] = json!(index),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub points: Vec<Point>,
}

type Shared = Arc<Engine>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create_session(State(engine): State<Shared>, mut form: Multipart) -> Result<Response, ServiceError> {
    let (mut image, mut task, mut mode) = (None, None, None);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let text = || String::from_utf8(data.to_vec()).map_err(|_| ServiceError::BadRequest(format!("field {name} is not UTF-8")));
        match name.as_str() {
            "image" => image = Some(data.clone()),
            "task" => task = Some(text()?),
            "mode" => mode = Some(text()?),
            other => return Err(ServiceError::BadRequest(format!("unexpected field `{other}`"))),
        }
    }
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing field `image`".into()))?;
    let task = task.ok_or_else(|| ServiceError::BadRequest("missing field `task`".into()))?;
    let info = blocking(move || engine.create_session(&image, task.trim(), mode.as_deref().map(str::trim))).await?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn predict(State(engine): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let request: PredictRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("invalid predict body: {e}")))?;
    let prediction = blocking(move || engine.predict(&id, &request.points)).await?;
    Ok(Json(prediction).into_response())
}

async fn delete_session(State(engine): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    engine.delete_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn tasks(State(engine): State<Shared>) -> Response {
    Json(json!({ "tasks": engine.tasks() })).into_response()
}

async fn health(State(engine): State<Shared>) -> Response {
    Json(engine.health()).into_response()
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", delete(delete_session))
        .route("/sessions/{id}/predict", post(predict))
        .route("/tasks", get(tasks))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(engine)
}
