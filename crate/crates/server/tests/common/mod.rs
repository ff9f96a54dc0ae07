#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use yesno_server::{router, Store};

pub struct Client {
    pub app: Router,
}

impl Client {
    pub fn new(store: Store) -> Self {
        Self { app: router(Arc::new(store)) }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    pub async fn create(&self, body: Value) -> String {
        let (status, v) = self.call("POST", "/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    pub async fn question(&self, id: &str) -> (StatusCode, Value) {
        self.call("GET", &format!("/sessions/{id}/question"), None).await
    }

    pub async fn answer(&self, id: &str, qid: u64, correct: bool) -> (StatusCode, Value) {
        self.call("POST", &format!("/sessions/{id}/answer"), Some(json!({"question_id": qid, "correct": correct}))).await
    }
}

pub fn two_items() -> Value {
    json!({"dataset": {"items": [{"id": 0, "p": 0.9}, {"id": 1, "p": 0.8}]}})
}

pub fn is_correct(q: &Value, truth: &[u8]) -> bool {
    q["items"]
        .as_array()
        .unwrap()
        .iter()
        .all(|it| truth[it["id"].as_u64().unwrap() as usize] == it["pseudo_label"].as_u64().unwrap() as u8)
}

/// Recursive copy, standing in for "the disk as it was when the process died".
pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}
