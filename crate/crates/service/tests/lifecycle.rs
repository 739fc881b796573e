mod common;

use std::io::{Read, Write};
use std::sync::Arc;

use axum::http::StatusCode;
use cctsne::classifier::MlpConfig;
use cctsne::synthetic::generate_classified;
use cctsne::FeatureMatrix;
use cctsne_service::{router, serve, AppState, Preload, ServiceConfig};
use common::*;
use ndarray::Array2;
use serde_json::json;

fn config_with_dir(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig { data_dir: Some(dir.to_path_buf()), ..ServiceConfig::default() }
}

#[tokio::test]
async fn sessions_survive_persist_and_restore() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(config_with_dir(dir.path()));
    let app = router(state.clone());
    let id = blob_session(&app, 80).await;
    let uri = format!("/session/{id}/labels");
    post(&app, &uri, json!({ "indices": (0..8).map(|k| 3 * k).collect::<Vec<_>>(), "class": 0 })).await;
    post(&app, &uri, json!({ "indices": (0..8).map(|k| 3 * k + 2).collect::<Vec<_>>(), "class": 2 })).await;
    let (status, _) = call(&app, "POST", &format!("/session/{id}/retrain"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let before = wait_idle(&app, &id).await;
    assert_eq!(state.persist().unwrap(), 1);

    let restored = AppState::restore(config_with_dir(dir.path())).unwrap();
    assert_eq!(restored.session_count(), 1);
    let app2 = router(restored);
    let (status, after) = get(&app2, &format!("/session/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    for key in ["points", "landmarks", "class_names", "alpha", "lambda", "label_counts", "labels", "predicted", "probabilities_summary", "test_accuracy", "trained"] {
        assert_eq!(after[key], before[key], "{key}");
    }

    // The restored session keeps working, including its classifier.
    let (status, _) = post(&app2, &format!("/session/{id}/alpha"), json!({ "alpha": 0.7 })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(wait_idle(&app2, &id).await["alpha"], 0.7);
    let (status, body) = call(&app2, "POST", &format!("/session/{id}/retrain"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    wait_idle(&app2, &id).await;
}

#[tokio::test]
async fn restore_from_empty_or_missing_dir() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(AppState::restore(config_with_dir(dir.path())).unwrap().session_count(), 0);
    let missing = dir.path().join("absent");
    assert_eq!(AppState::restore(config_with_dir(&missing)).unwrap().session_count(), 0);
    std::fs::write(dir.path().join("junk.json"), "{").unwrap();
    assert_eq!(AppState::restore(config_with_dir(dir.path())).unwrap().session_count(), 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_answers_health_and_flushes_on_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let (rows, _) = blobs(5, 3);
    let x = Array2::from_shape_fn((15, 4), |(i, k)| rows[i][k]);
    let preload = Preload { features: FeatureMatrix::new(x).unwrap(), probabilities: None, truth: None, test_indices: None };
    let config = ServiceConfig { preload: Some(Arc::new(preload)), ..config_with_dir(dir.path()) };
    let state = AppState::new(config);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, state.clone(), async {
        rx.await.ok();
    }));

    let request = |raw: String| {
        tokio::task::spawn_blocking(move || {
            let mut stream = std::net::TcpStream::connect(addr).unwrap();
            stream.write_all(raw.as_bytes()).unwrap();
            let mut out = String::new();
            stream.read_to_string(&mut out).unwrap();
            out
        })
    };
    let health = request("GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into()).await.unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(r#""status":"ok""#));

    let body = r#"{"n_classes":2,"iterations":30}"#;
    let created = request(format!(
        "POST /session HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ))
    .await
    .unwrap();
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");

    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert_eq!(AppState::restore(config_with_dir(dir.path())).unwrap().session_count(), 1);
}

/// Labels `per_class` training instances of every class (outside the test set),
/// chosen by a seeded shuffle, and returns the retrain accuracy.
async fn label_and_retrain(app: &axum::Router, id: &str, order: &[usize], truth: &[usize], per_class: usize, m: usize) -> f64 {
    for c in 0..m {
        let picked: Vec<usize> = order.iter().copied().filter(|&i| truth[i] == c).take(per_class).collect();
        let (status, _) = post(app, &format!("/session/{id}/labels"), json!({ "indices": picked, "class": c })).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, body) = call(app, "POST", &format!("/session/{id}/retrain"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let acc = body["test_accuracy"].as_f64().unwrap();
    assert_eq!(body["new_alpha"].as_f64().unwrap(), acc * acc);
    wait_idle(app, id).await;
    acc
}

#[tokio::test]
async fn more_labels_do_not_hurt_accuracy() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let data = generate_classified(0, &MlpConfig::default()).unwrap();
    let truth = data.data.labels.clone();
    let m = truth.iter().max().unwrap() + 1;
    let preload = Preload {
        features: data.data.features.clone(),
        probabilities: None,
        truth: Some(truth.clone()),
        test_indices: Some(data.test_indices.clone()),
    };
    let app = router(AppState::new(ServiceConfig { preload: Some(Arc::new(preload)), ..ServiceConfig::default() }));

    let mut diffs = Vec::new();
    for seed in 0..5u64 {
        let (status, body) = post(&app, "/session", json!({ "iterations": 40, "seed": seed })).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        let id = body["id"].as_str().unwrap().to_string();
        wait_idle(&app, &id).await;

        let mut order: Vec<usize> = data.train_indices.clone();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let first = label_and_retrain(&app, &id, &order, &truth, 4, m).await;
        let second = label_and_retrain(&app, &id, &order, &truth, 25, m).await;
        diffs.push(second - first);
    }
    diffs.sort_by(f64::total_cmp);
    let median = diffs[diffs.len() / 2];
    assert!(median >= -0.05, "median accuracy change {median} ({diffs:?})");
}

#[tokio::test]
async fn preloaded_truth_supplies_class_vocabulary_and_test_set() {
    let data = generate_classified(1, &MlpConfig::default()).unwrap();
    let preload = Preload {
        features: data.data.features.clone(),
        probabilities: Some(data.probabilities.clone()),
        truth: Some(data.data.labels.clone()),
        test_indices: Some(data.test_indices.clone()),
    };
    let app = router(AppState::new(ServiceConfig { preload: Some(Arc::new(preload)), ..ServiceConfig::default() }));
    let (status, body) = post(&app, "/session", json!({ "iterations": 20 })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["n"], 408);
    assert_eq!(body["m"], data.probabilities.m());
    let snap = wait_idle(&app, body["id"].as_str().unwrap()).await;
    assert_eq!(snap["alpha"], 0.0);
    let predicted: Vec<usize> = serde_json::from_value(snap["predicted"].clone()).unwrap();
    assert_eq!(predicted, data.probabilities.argmax_labels());
}
