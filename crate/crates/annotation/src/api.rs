//! HTTP JSON API over a [`Store`].
//!
//! | method | path                         |                                   |
//! |--------|------------------------------|-----------------------------------|
//! | POST   | `/sessions`                  | `{annotator_id, task_set_id}`     |
//! | GET    | `/sessions/{token}/next`     | next task or `{"status":"done"}`  |
//! | POST   | `/sessions/{token}/tasks/{id}` | `{base_version, record}`        |
//! | GET    | `/export/{task_set_id}`      | every submitted record            |
//! | GET    | `/images/{content_hash}`     | image bytes                       |

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use faithscore::meta_eval::AnnotationRecord;

use crate::error::AnnotationError;
use crate::store::{ExportedRecord, NextTask, Store};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub annotator_id: String,
    pub task_set_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub token: String,
    pub annotator_id: String,
    pub task_set_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submission {
    pub base_version: u64,
    pub record: AnnotationRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Export {
    pub task_set_id: String,
    pub records: Vec<ExportedRecord>,
}

impl IntoResponse for AnnotationError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (status, body) = match self {
            AnnotationError::UnknownTaskSet(_)
            | AnnotationError::UnknownTask(_)
            | AnnotationError::UnknownImage(_)
            | AnnotationError::NothingToExport(_) => (StatusCode::NOT_FOUND, json!({ "error": message })),
            AnnotationError::UnknownSession => (StatusCode::UNAUTHORIZED, json!({ "error": message })),
            AnnotationError::Conflict { current } => (
                StatusCode::CONFLICT,
                json!({ "error": message, "current_version": current }),
            ),
            AnnotationError::TaskSetExists(_) => (StatusCode::CONFLICT, json!({ "error": message })),
            AnnotationError::Validation(fields) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "invalid annotation", "fields": fields }),
            ),
            AnnotationError::InvalidId(_) => (StatusCode::BAD_REQUEST, json!({ "error": message })),
            AnnotationError::Io { .. } | AnnotationError::Corrupt { .. } | AnnotationError::Input(_) => {
                log::error!("{message}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message }))
            }
        };
        (status, Json(body)).into_response()
    }
}

/// Runs a store operation off the async executor.
async fn blocking<T, F>(store: Arc<Store>, op: F) -> Result<T, Response>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T, AnnotationError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || op(&store)).await {
        Ok(result) => result.map_err(IntoResponse::into_response),
        Err(e) => Err((
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": format!("store task failed: {e}") })),
        )
            .into_response()),
    }
}

async fn create_session(
    State(store): State<Arc<Store>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), Response> {
    let s = blocking(store, move |st| st.create_session(&req.annotator_id, &req.task_set_id)).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            token: s.token,
            annotator_id: s.annotator_id,
            task_set_id: s.task_set_id,
        }),
    ))
}

async fn next_task(State(store): State<Arc<Store>>, Path(token): Path<String>) -> Result<Json<NextTask>, Response> {
    blocking(store, move |st| st.next_task(&token)).await.map(Json)
}

async fn submit(
    State(store): State<Arc<Store>>,
    Path((token, task_id)): Path<(String, String)>,
    Json(sub): Json<Submission>,
) -> Result<Json<Accepted>, Response> {
    let version = blocking(store, move |st| st.submit(&token, &task_id, sub.record, sub.base_version)).await?;
    Ok(Json(Accepted { version }))
}

async fn export(State(store): State<Arc<Store>>, Path(task_set_id): Path<String>) -> Result<Json<Export>, Response> {
    let id = task_set_id.clone();
    let records = blocking(store, move |st| st.export_records(&id)).await?;
    Ok(Json(Export { task_set_id, records }))
}

fn content_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image(State(store): State<Arc<Store>>, Path(hash): Path<String>) -> Result<Response, Response> {
    let bytes = blocking(store, move |st| st.image(&hash)).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes))], bytes).into_response())
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{token}/next", get(next_task))
        .route("/sessions/{token}/tasks/{task_id}", post(submit))
        .route("/export/{task_set_id}", get(export))
        .route("/images/{content_hash}", get(image))
        .with_state(store)
}

/// Serves the API until the listener fails.
pub async fn serve(store: Arc<Store>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}
