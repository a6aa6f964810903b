//! Outbound HTTP clients for the back-off classifier and an external embedding model.

use std::time::Duration;

use anchornav_core::dense::{DenseError, EmbeddingProvider, TokenMatrix};
use anchornav_core::router::{BackoffClient, BackoffError, BackoffRequest, BackoffResponse};
use serde::{Deserialize, Serialize};

pub const BACKOFF_SCHEMA_VERSION: u32 = 1;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteWireRequest {
    pub schema_version: u32,
    pub transcript: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteWireResponse {
    #[serde(default)]
    pub schema_version: Option<u32>,
    #[serde(flatten)]
    pub response: BackoffResponse,
}

/// `POST {base}/route`.
pub struct HttpBackoff {
    url: String,
    agent: ureq::Agent,
}

impl HttpBackoff {
    pub fn new(base_url: &str, deadline: Duration) -> Self {
        Self { url: join(base_url, "route"), agent: agent(deadline) }
    }
}

impl BackoffClient for HttpBackoff {
    fn classify(&self, request: &BackoffRequest) -> Result<BackoffResponse, BackoffError> {
        let body = RouteWireRequest { schema_version: BACKOFF_SCHEMA_VERSION, transcript: request.transcript.clone() };
        let mut resp = self.agent.post(&self.url).send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackoffError::Timeout,
            other => BackoffError::Unavailable(other.to_string()),
        })?;
        let wire: RouteWireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackoffError::Malformed(e.to_string()))?;
        if let Some(v) = wire.schema_version.filter(|&v| v != BACKOFF_SCHEMA_VERSION) {
            return Err(BackoffError::Malformed(format!("schema_version {v}")));
        }
        Ok(wire.response)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireRequest {
    pub tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedWireResponse {
    pub vectors: Vec<Vec<f32>>,
}

/// `POST {base}/embed`; token vectors may depend on context.
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str, dim: usize, timeout: Duration) -> Self {
        Self { url: join(base_url, "embed"), dim, agent: agent(timeout) }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<TokenMatrix, DenseError> {
        let unavailable = |e: String| DenseError::ProviderUnavailable(e);
        let body = EmbedWireRequest { tokens: tokens.to_vec() };
        let mut resp = self.agent.post(&self.url).send_json(&body).map_err(|e| unavailable(e.to_string()))?;
        let wire: EmbedWireResponse = resp.body_mut().read_json().map_err(|e| unavailable(e.to_string()))?;
        if wire.vectors.len() != tokens.len() {
            return Err(unavailable(format!("{} vectors for {} tokens", wire.vectors.len(), tokens.len())));
        }
        if let Some(bad) = wire.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(DenseError::DimensionMismatch(self.dim, bad.len()));
        }
        TokenMatrix::from_rows("query", tokens.to_vec(), wire.vectors)
    }
}
