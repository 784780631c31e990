//! JSON routes over a shared [`Session`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::error::ServiceError;
use crate::session::{Ack, BatchResponse, DocumentView, Session, Status, Submission, TrainingSummary};

type Shared = Arc<Session>;
type ApiResult<T> = Result<Json<T>, ServiceError>;

#[derive(Debug, Deserialize)]
struct BatchQuery {
    size: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct LabelsBody {
    records: Vec<Submission>,
}

#[derive(Debug, Default, Deserialize)]
struct OracleBody {
    #[serde(default)]
    doc_ids: Option<Vec<String>>,
}

/// Runs blocking session work (fsync, training) off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn status(State(s): State<Shared>) -> Json<Status> {
    Json(s.status())
}

async fn batch(State(s): State<Shared>, Query(q): Query<BatchQuery>) -> ApiResult<BatchResponse> {
    s.next_batch(q.size).map(Json)
}

async fn labels(State(s): State<Shared>, Json(body): Json<LabelsBody>) -> ApiResult<Ack> {
    blocking(move || s.submit(body.records)).await
}

async fn retrain(State(s): State<Shared>) -> ApiResult<TrainingSummary> {
    blocking(move || s.retrain()).await
}

async fn document(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<DocumentView> {
    s.document(&id).map(Json)
}

async fn oracle_answer(State(s): State<Shared>, body: Option<Json<OracleBody>>) -> ApiResult<Ack> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    blocking(move || s.oracle_answer(body.doc_ids)).await
}

pub fn router(session: Shared) -> Router {
    let static_dir = session.config().static_dir.clone();
    let api = Router::new()
        .route("/api/status", get(status))
        .route("/api/batch", get(batch))
        .route("/api/labels", post(labels))
        .route("/api/retrain", post(retrain))
        .route("/api/doc/{id}", get(document))
        .route("/api/oracle/answer", post(oracle_answer))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr`, prints `listening on ADDR` to stdout, and serves until
/// interrupted.
pub async fn serve(addr: SocketAddr, session: Shared) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Io(addr.to_string().into(), e))?;
    let local = listener
        .local_addr()
        .map_err(|e| ServiceError::Io(addr.to_string().into(), e))?;
    println!("listening on {local}");
    use std::io::Write;
    let _ = std::io::stdout().flush();
    tracing::info!(%local, "serving");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Io(local.to_string().into(), e))
}
