//! Loopback back-off service answering with [`StubBackoff`] heuristics.

use axum::routing::post;
use axum::{Json, Router};
use anchornav_core::router::StubBackoff;

use crate::clients::{RouteWireRequest, RouteWireResponse, BACKOFF_SCHEMA_VERSION};

pub fn stub_router() -> Router {
    Router::new().route("/route", post(route))
}

async fn route(Json(req): Json<RouteWireRequest>) -> Json<RouteWireResponse> {
    let response = StubBackoff.respond(&req.transcript);
    Json(RouteWireResponse { schema_version: Some(BACKOFF_SCHEMA_VERSION), response })
}

pub async fn serve_stub(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "back-off stub listening");
    axum::serve(listener, stub_router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
