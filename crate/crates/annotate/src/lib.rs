//! HTTP API for the labelling tool.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/videos` | |
//! | GET | `/videos/{id}/frames/{n}` | |
//! | GET | `/videos/{id}/labels/{n}` | |
//! | GET | `/videos/{id}/session` | |
//! | PUT | `/videos/{id}/session/initial` | `{"count": 3, "mode": "customers_only"}` |
//! | POST | `/videos/{id}/session/events` | `{"frame": 10, "delta": 1}` |
//! | POST | `/videos/{id}/session/undo` | |
//! | POST | `/videos/{id}/export` | |
//!
//! Errors come back as `{"error": "..."}` with 404 for unknown videos or
//! frames and 422 when a request would break a session invariant.

pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use peoplecount_core::label::LabelMode;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Mutex;

pub use store::{Store, StoreError};

pub type SharedStore = Arc<Mutex<Store>>;

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            StoreError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            StoreError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            StoreError::Io(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

type ApiResult = Result<Response, StoreError>;

#[derive(Deserialize)]
struct InitialBody {
    count: i64,
    #[serde(default)]
    mode: Option<LabelMode>,
}

#[derive(Deserialize)]
struct EventBody {
    frame: u64,
    delta: i8,
}

async fn list(State(s): State<SharedStore>) -> ApiResult {
    Ok(Json(s.lock().await.list()?).into_response())
}

async fn frame(State(s): State<SharedStore>, Path((id, n)): Path<(String, u64)>) -> ApiResult {
    let f = s.lock().await.frame(&id, n)?;
    Ok(([(header::CONTENT_TYPE, f.content_type)], f.bytes).into_response())
}

async fn label(State(s): State<SharedStore>, Path((id, n)): Path<(String, u64)>) -> ApiResult {
    let count = s.lock().await.label_at(&id, n)?;
    Ok(Json(json!({ "frame": n, "count": count })).into_response())
}

async fn session(State(s): State<SharedStore>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(s.lock().await.session(&id)?).into_response())
}

async fn initial(State(s): State<SharedStore>, Path(id): Path<String>, Json(b): Json<InitialBody>) -> ApiResult {
    Ok(Json(s.lock().await.set_initial(&id, b.count, b.mode)?).into_response())
}

async fn event(State(s): State<SharedStore>, Path(id): Path<String>, Json(b): Json<EventBody>) -> ApiResult {
    let mut store = s.lock().await;
    let ev = store.adjust(&id, b.frame, b.delta)?;
    let count = store.label_at(&id, ev.frame)?;
    Ok((StatusCode::CREATED, Json(json!({ "event": ev, "count": count }))).into_response())
}

async fn undo(State(s): State<SharedStore>, Path(id): Path<String>) -> ApiResult {
    let mut store = s.lock().await;
    let ev = store.undo(&id)?;
    let count = store.label_at(&id, ev.frame)?;
    Ok(Json(json!({ "event": ev, "count": count })).into_response())
}

async fn export(State(s): State<SharedStore>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(s.lock().await.export(&id)?).into_response())
}

pub fn router(store: Store) -> Router {
    Router::new()
        .route("/videos", get(list))
        .route("/videos/{id}/frames/{n}", get(frame))
        .route("/videos/{id}/labels/{n}", get(label))
        .route("/videos/{id}/session", get(session))
        .route("/videos/{id}/session/initial", put(initial))
        .route("/videos/{id}/session/events", post(event))
        .route("/videos/{id}/session/undo", post(undo))
        .route("/videos/{id}/export", post(export))
        .with_state(Arc::new(Mutex::new(store)))
}

/// Serves `root` until the process is stopped.
pub async fn serve(root: std::path::PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Store::new(root))).await
}
