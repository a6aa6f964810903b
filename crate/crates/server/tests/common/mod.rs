#![allow(dead_code)]

use std::sync::Arc;

use anchornav_core::config::AppConfig;
use anchornav_server::http::router;
use anchornav_server::Navigator;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture(name: &str) -> String {
    let path = format!("{}/../../fixtures/docs/{name}.json", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub struct Api {
    pub nav: Arc<Navigator>,
    app: axum::Router,
}

impl Api {
    pub fn new() -> Self {
        Self::with(Navigator::local(AppConfig::default()))
    }

    pub fn with(nav: Navigator) -> Self {
        let nav = Arc::new(nav);
        Self { app: router(nav.clone()), nav }
    }

    pub async fn raw(&self, method: Method, uri: &str, body: Option<String>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    pub async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.raw(method, uri, body.map(|b| b.to_string())).await;
        let v = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        (status, v)
    }

    pub async fn upload(&self, name: &str) -> Value {
        let (status, text) = self.raw(Method::POST, "/documents", Some(fixture(name))).await;
        assert_eq!(status, StatusCode::CREATED, "{text}");
        serde_json::from_str(&text).unwrap()
    }

    pub async fn command(&self, doc: &str, body: Value) -> (StatusCode, Value) {
        self.json(Method::POST, &format!("/sessions/{doc}/command"), Some(body)).await
    }

    pub async fn say(&self, doc: &str, transcript: &str) -> Value {
        let (status, v) = self.command(doc, serde_json::json!({ "transcript": transcript, "confirm": true })).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        v
    }

    pub async fn anchor_ids(&self, doc: &str) -> Vec<String> {
        let (status, v) = self.json(Method::GET, &format!("/documents/{doc}/anchors"), None).await;
        assert_eq!(status, StatusCode::OK);
        v["anchors"].as_array().unwrap().iter().map(|a| a["anchor_id"].as_str().unwrap().to_string()).collect()
    }

    pub async fn audit(&self, session: &str) -> Vec<Value> {
        let (status, text) = self.raw(Method::GET, &format!("/audit?session={session}"), None).await;
        assert_eq!(status, StatusCode::OK);
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

/// Every anchor id a response mentions, wherever it appears.
pub fn referenced_ids(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                match (k.as_str(), x) {
                    ("anchor_id", Value::String(s)) => out.push(s.clone()),
                    ("highlight_ids" | "anchor_ids", Value::Array(a)) => {
                        out.extend(a.iter().filter_map(|s| s.as_str().map(str::to_string)))
                    }
                    _ => referenced_ids(x, out),
                }
            }
        }
        Value::Array(a) => a.iter().for_each(|x| referenced_ids(x, out)),
        _ => {}
    }
}
