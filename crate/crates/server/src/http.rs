//! JSON over HTTP.
//!
//! | method | path                              | body / query                  |
//! |--------|-----------------------------------|-------------------------------|
//! | POST   | `/documents`                      | layout payload                |
//! | GET    | `/documents`                      |                               |
//! | GET    | `/documents/{doc_id}/anchors`     |                               |
//! | GET    | `/documents/{doc_id}/synopsis`    | `?scope=`                     |
//! | POST   | `/sessions/{doc_id}/command`      | [`CommandRequest`]            |
//! | POST   | `/sessions/{doc_id}/cancel`       | `{"session_id": ..}` optional |
//! | GET    | `/audit`                          | `?session=`                   |
//! | GET    | `/healthz`                        |                               |
//!
//! Errors are `{"error": code, "message": text}` with a 4xx/5xx status.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::audit::to_ndjson;
use crate::navigator::{CommandRequest, NavError, Navigator};

pub type Shared = Arc<Navigator>;

impl IntoResponse for NavError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

pub fn router(nav: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/documents", post(ingest).get(list_documents))
        .route("/documents/{doc_id}/anchors", get(anchors))
        .route("/documents/{doc_id}/synopsis", get(synopsis))
        .route("/sessions/{doc_id}/command", post(command))
        .route("/sessions/{doc_id}/cancel", post(cancel))
        .route("/audit", get(audit))
        .with_state(nav)
}

async fn blocking<T, F>(f: F) -> Result<T, NavError>
where
    F: FnOnce() -> Result<T, NavError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| NavError::Internal(e.to_string()))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, NavError> {
    serde_json::from_slice(body).map_err(|e| NavError::BadRequest(e.to_string()))
}

async fn healthz(State(nav): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "documents": nav.doc_ids().len() }))
}

async fn ingest(State(nav): State<Shared>, body: Bytes) -> Result<Response, NavError> {
    let json = String::from_utf8(body.to_vec()).map_err(|e| NavError::Schema(e.to_string()))?;
    let summary = blocking(move || nav.ingest_json(&json)).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn list_documents(State(nav): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "documents": nav.doc_ids() }))
}

async fn anchors(State(nav): State<Shared>, Path(doc_id): Path<String>) -> Result<Response, NavError> {
    let anchors = nav.anchors(&doc_id)?;
    Ok(Json(json!({ "doc_id": doc_id, "anchors": anchors })).into_response())
}

#[derive(Debug, Deserialize)]
struct ScopeQuery {
    scope: Option<String>,
}

async fn synopsis(
    State(nav): State<Shared>,
    Path(doc_id): Path<String>,
    Query(q): Query<ScopeQuery>,
) -> Result<Response, NavError> {
    let scope = q.scope.as_deref().unwrap_or("document");
    Ok(Json(nav.synopsis(&doc_id, scope)?).into_response())
}

async fn command(State(nav): State<Shared>, Path(doc_id): Path<String>, body: Bytes) -> Result<Response, NavError> {
    let req: CommandRequest = parse_body(&body)?;
    if req.transcript.trim().is_empty() {
        return Err(NavError::BadRequest("transcript is empty".into()));
    }
    let resp = blocking(move || nav.command(&doc_id, &req)).await?;
    Ok(Json(resp).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CancelRequest {
    #[serde(default)]
    session_id: Option<String>,
}

async fn cancel(State(nav): State<Shared>, Path(doc_id): Path<String>, body: Bytes) -> Result<Response, NavError> {
    let req: CancelRequest = if body.iter().all(u8::is_ascii_whitespace) { CancelRequest::default() } else { parse_body(&body)? };
    Ok(Json(nav.cancel(&doc_id, req.session_id.as_deref())?).into_response())
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    session: Option<String>,
}

async fn audit(State(nav): State<Shared>, Query(q): Query<AuditQuery>) -> Response {
    let records = nav.audit(q.session.as_deref());
    ([(header::CONTENT_TYPE, "application/x-ndjson")], to_ndjson(&records)).into_response()
}

/// Binds and serves until ctrl-c.
pub async fn serve(nav: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(nav))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
