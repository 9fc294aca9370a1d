#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mastery_core::Timestamp;
use mastery_service::{start, Clock, Service, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub const T0: i64 = 1_790_000_000_000;

pub fn course_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../course")
}

/// Copies the sample course into a temp dir with an empty ledger.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub now: Arc<AtomicI64>,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for f in ["catalog.toml", "schedule.toml", "tokens.txt"] {
            std::fs::copy(course_dir().join(f), dir.path().join(f)).unwrap();
        }
        Self { dir, now: Arc::new(AtomicI64::new(T0)) }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> ServiceConfig {
        ServiceConfig {
            ledger: Some(self.path("ledger.ndjson")),
            catalog: Some(self.path("catalog.toml")),
            schedule: Some(self.path("schedule.toml")),
            tokens: Some(self.path("tokens.txt")),
            recheck_seed: Some(1),
            ..ServiceConfig::default()
        }
    }

    pub fn clock(&self) -> Clock {
        let now = self.now.clone();
        Arc::new(move || Timestamp(now.load(Ordering::SeqCst)))
    }

    pub fn advance_minutes(&self, m: i64) {
        self.now.fetch_add(m * Timestamp::MINUTE, Ordering::SeqCst);
    }

    pub fn start(&self) -> Service {
        start(&self.config(), self.clock()).unwrap()
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl Reply {
    pub fn code(&self) -> &str {
        self.body["code"].as_str().unwrap_or("")
    }
}

pub async fn call(router: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    Reply { status, body }
}

pub async fn get(router: &Router, uri: &str, token: &str) -> Reply {
    call(router, Method::GET, uri, Some(token), None).await
}

pub async fn post(router: &Router, uri: &str, token: &str, body: Value) -> Reply {
    call(router, Method::POST, uri, Some(token), Some(body)).await
}

pub const ADMIN: &str = "admin-token";
pub const ANA: &str = "examiner-ana";
pub const BEN: &str = "examiner-ben";
pub const S1: &str = "student-s1";
pub const S2: &str = "student-s2";
