#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use exprforge_core::expression_db::load_database;
use exprforge_core::retrieval::TextCompletion;
use exprforge_service::{router, AppState, JobStore, Settings, SettingsStore};
use tower::ServiceExt;

pub fn sample_db_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_db")
}

pub struct TestApp {
    pub router: Router,
    pub state: Arc<AppState>,
    _dir: tempfile::TempDir,
}

pub fn app_with(settings: Settings, llm: Option<Arc<dyn TextCompletion>>, cap: usize) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let db = load_database(sample_db_path()).unwrap();
    let settings = SettingsStore::open(dir.path().join("settings.json"), settings).unwrap();
    let jobs = JobStore::open(dir.path().join("jobs"), cap).unwrap();
    let state = Arc::new(AppState::new(db, settings, jobs, llm));
    TestApp {
        router: router(state.clone()),
        state,
        _dir: dir,
    }
}

pub fn app() -> TestApp {
    app_with(Settings::default(), None, 100)
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn send(app: &TestApp, req: Request<Body>) -> Reply {
    let resp = app.router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap()
        .to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn get(app: &TestApp, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn json(app: &TestApp, method: Method, uri: &str, body: serde_json::Value) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

const BOUNDARY: &str = "exprforge-test-boundary";

pub fn multipart(parts: &[(&str, &[u8])]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

pub async fn post_multipart(app: &TestApp, uri: &str, parts: &[(&str, &[u8])]) -> Reply {
    let (ct, body) = multipart(parts);
    let req = Request::post(uri)
        .header("content-type", ct)
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

/// Polls a job until it leaves queued/running.
pub async fn wait_for(app: &TestApp, id: &str) -> serde_json::Value {
    let start = Instant::now();
    let mut last: Option<String> = None;
    loop {
        let r = get(app, &format!("/api/edits/{id}")).await;
        assert_eq!(r.status, StatusCode::OK);
        let job = r.json();
        let state = job["state"].as_str().unwrap().to_string();
        if let Some(prev) = last.as_deref() {
            assert!(rank(prev) <= rank(&state), "state went {prev} -> {state}");
        }
        if state == "done" || state == "failed" {
            return job;
        }
        last = Some(state);
        assert!(start.elapsed() < Duration::from_secs(30), "job {id} stuck");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

fn rank(state: &str) -> u8 {
    match state {
        "queued" => 0,
        "running" => 1,
        _ => 2,
    }
}
