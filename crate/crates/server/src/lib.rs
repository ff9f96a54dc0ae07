//! HTTP service for interactive annotation sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create from a probability file or a synthetic spec |
//! | GET | `/sessions/{id}/question` | issue the next question |
//! | POST | `/sessions/{id}/answer` | `{question_id, correct}` |
//! | GET | `/sessions/{id}/metrics` | annotation curve |
//! | GET | `/sessions/{id}` | full session view |
//!
//! Errors: 404 unknown session, 409 when a question is already outstanding
//! (the body carries it), 422 for invalid input.

pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use error::ServiceError;
pub use store::{CreateRequest, Store, DATA_DIR_ENV};

use store::{Session, SessionHandle};

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub items: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub question_id: u64,
    pub correct: bool,
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation {
        message: e.to_string(),
        line: Some(e.line()),
        column: Some(e.column()),
    })
}

/// Runs `f` on the session under its lock, off the async executor.
async fn with_session<T, F>(store: Arc<Store>, id: String, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let handle: SessionHandle = store.get(&id)?;
        let mut session = handle
            .lock()
            .map_err(|_| ServiceError::Internal("session lock poisoned".into()))?;
        f(&mut session)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create(State(store): State<Arc<Store>>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let req: CreateRequest = parse(&body)?;
    let created = tokio::task::spawn_blocking(move || -> Result<Created, ServiceError> {
        let id = store.create(req)?;
        let items = store.get(&id)?.lock().map(|s| s.view().progress.total).unwrap_or(0);
        Ok(Created { id, items })
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn question(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(with_session(store, id, |s| s.next_question()).await?))
}

async fn answer(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let req: AnswerRequest = parse(&body)?;
    Ok(Json(with_session(store, id, move |s| s.answer(req.question_id, req.correct)).await?))
}

async fn metrics(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(with_session(store, id, |s| Ok(s.metrics())).await?))
}

async fn session(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(with_session(store, id, |s| Ok(s.view())).await?))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/question", get(question))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, store: Store) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
