#![allow(dead_code)]

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body)).await
}

/// Polls the snapshot until no job is running.
pub async fn wait_idle(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (status, snap) = get(app, &format!("/session/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if !snap["running"].as_bool().unwrap() {
            return snap;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Three well-separated 4D blobs of `per_class` points each, rows interleaved
/// by class (row i belongs to class i % 3).
pub fn blobs(per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3 * per_class;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        rows.push((0..4).map(|k| rng.random_range(-1.0..1.0) + if k == c { 8.0 } else { 0.0 }).collect());
        labels.push(c);
    }
    (rows, labels)
}

pub fn to_csv(rows: &[Vec<f64>], header: Option<&[&str]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in rows {
        out.push_str(&r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Creates a blob session with three classes and waits for the cold embedding.
pub async fn blob_session(app: &Router, iterations: usize) -> String {
    let (rows, _) = blobs(20, 1);
    let (status, body) = post(
        app,
        "/session",
        json!({ "features_csv": to_csv(&rows, None), "n_classes": 3, "iterations": iterations, "perplexity": 10.0 }),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let id = body["id"].as_str().unwrap().to_string();
    wait_idle(app, &id).await;
    id
}

pub fn points(v: &Value) -> Vec<[f64; 2]> {
    serde_json::from_value(v.clone()).unwrap()
}
