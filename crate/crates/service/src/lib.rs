//! HTTP/JSON session service for interactive labeling with class-constrained t-SNE.
//!
//! Each session owns a dataset, its current class probabilities, user labels,
//! an optional classifier and an embedding. Optimizer jobs run on the blocking
//! pool and publish frames that clients poll through `/session/{id}/frames`.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use cctsne::classifier::MlpConfig;
use cctsne::io::{parse_features, parse_probabilities, FeatureOptions};
use cctsne::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix, Hyperparams};
use serde::{Deserialize, Serialize};

pub use error::ApiError;
pub use session::{Frame, Session, SessionData, TestSet};

/// Dataset loaded at startup; sessions created without a features payload use it.
#[derive(Debug, Clone)]
pub struct Preload {
    pub features: FeatureMatrix,
    pub probabilities: Option<ClassProbabilityMatrix>,
    /// Ground-truth labels. Together with `test_indices` they form a fixed
    /// evaluation set for retraining.
    pub truth: Option<Vec<usize>>,
    pub test_indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub preload: Option<Arc<Preload>>,
    /// Where sessions are written on shutdown and read at startup.
    pub data_dir: Option<PathBuf>,
    /// Publish a frame every this many optimizer iterations.
    pub frame_every: usize,
    /// Defaults for new sessions; requests may override some fields.
    pub hyperparams: Hyperparams,
    pub mlp: MlpConfig,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            preload: None,
            data_dir: None,
            frame_every: 10,
            hyperparams: Hyperparams::default(),
            mlp: MlpConfig::default(),
            max_body_bytes: 512 * 1024 * 1024,
        }
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self { inner: Arc::new(Inner { config, sessions: RwLock::new(HashMap::new()) }) }
    }

    /// Builds the state and loads every session found in `config.data_dir`.
    pub fn restore(config: ServiceConfig) -> std::io::Result<Self> {
        let state = Self::new(config);
        if let Some(dir) = &state.inner.config.data_dir {
            for record in session::read_records(dir)? {
                let id = record.id.clone();
                match Session::from_record(record) {
                    Ok(s) => {
                        state.sessions_mut().insert(id, Arc::new(s));
                    }
                    Err(e) => log::warn!("skipping session {id}: {e}"),
                }
            }
            log::info!("restored {} session(s) from {}", state.session_count(), dir.display());
        }
        Ok(state)
    }

    /// Writes every session to `config.data_dir`. A no-op without a data dir.
    pub fn persist(&self) -> std::io::Result<usize> {
        let Some(dir) = &self.inner.config.data_dir else {
            return Ok(0);
        };
        let sessions: Vec<Arc<Session>> = self.sessions().values().cloned().collect();
        for s in &sessions {
            session::write_record(dir, &s.to_record())?;
        }
        log::info!("persisted {} session(s) to {}", sessions.len(), dir.display());
        Ok(sessions.len())
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions().get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    fn sessions(&self) -> std::sync::RwLockReadGuard<'_, HashMap<String, Arc<Session>>> {
        self.inner.sessions.read().unwrap_or_else(|e| e.into_inner())
    }

    fn sessions_mut(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, Arc<Session>>> {
        self.inner.sessions.write().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_body_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_state))
        .route("/session/{id}/alpha", post(set_alpha))
        .route("/session/{id}/labels", post(label_instances))
        .route("/session/{id}/retrain", post(retrain))
        .route("/session/{id}/frames", get(frames))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then persists all sessions.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.persist()?;
    Ok(())
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    sessions: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok", sessions: state.session_count() })
}

/// Body of `POST /session`. Without `features_csv` the server's preloaded dataset is used.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    pub features_csv: Option<String>,
    pub probabilities_csv: Option<String>,
    /// Class vocabulary when no probabilities are given.
    pub class_names: Option<Vec<String>>,
    pub n_classes: Option<usize>,
    pub standardize: bool,
    pub perplexity: Option<f64>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub job: u64,
    pub n: usize,
    pub m: usize,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let Json(req) = body?;
    let config = state.config().clone();
    let data = tokio::task::spawn_blocking(move || build_session(req, &config))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let (n, m) = (data.features.n(), data.probabilities.m());

    let id = format!("{:032x}", rand::random::<u128>());
    let session = Arc::new(Session::new(id.clone(), data));
    state.sessions_mut().insert(id.clone(), session.clone());
    let job = session.start_cold(state.config().frame_every)?;
    log::info!("session {id}: created with n={n}, m={m}");
    Ok((StatusCode::CREATED, Json(CreateResponse { id, job, n, m })))
}

fn build_session(req: CreateRequest, config: &ServiceConfig) -> Result<SessionData, ApiError> {
    let bad = |e: cctsne::Error| ApiError::bad_request(e.to_string());
    let preload = config.preload.as_deref();
    let (features, preload_probs, test_set) = match (&req.features_csv, preload) {
        (Some(text), _) => {
            let options = FeatureOptions { standardize: req.standardize };
            (parse_features(text.as_bytes(), options).map_err(bad)?, None, None)
        }
        (None, Some(p)) => {
            let test_set = match (&p.truth, &p.test_indices) {
                (Some(truth), Some(indices)) => {
                    let mut indices = indices.clone();
                    indices.sort_unstable();
                    indices.dedup();
                    Some(Arc::new(TestSet { truth: truth.clone(), indices }))
                }
                _ => None,
            };
            (p.features.clone(), p.probabilities.clone(), test_set)
        }
        (None, None) => return Err(ApiError::bad_request("`features_csv` is required: no dataset is preloaded")),
    };
    let n = features.n();

    let probabilities = match (&req.probabilities_csv, preload_probs) {
        (Some(text), _) => parse_probabilities(text.as_bytes()).map_err(bad)?,
        (None, Some(p)) => p,
        (None, None) => {
            let names = match (req.class_names.clone(), req.n_classes) {
                (Some(names), _) => names,
                (None, Some(m)) => (0..m).map(|u| format!("c{u}")).collect(),
                (None, None) => match test_set.as_ref().and_then(|t| t.truth.iter().max()) {
                    Some(&max) => (0..=max).map(|u| format!("c{u}")).collect(),
                    None => return Err(ApiError::bad_request("give `probabilities_csv`, `class_names` or `n_classes`")),
                },
            };
            if names.is_empty() {
                return Err(ApiError::bad_request("at least one class is required"));
            }
            ClassProbabilityMatrix::uniform(n, names).map_err(bad)?
        }
    };
    if probabilities.n() != n {
        return Err(ApiError::bad_request(format!("{} probability rows for {n} feature rows", probabilities.n())));
    }
    if let Some(ts) = &test_set {
        if ts.truth.len() != n || ts.indices.last().is_some_and(|&i| i >= n) {
            return Err(ApiError::bad_request("preloaded ground truth does not match the features"));
        }
    }
    if n < 3 {
        return Err(ApiError::bad_request(format!("at least 3 instances are required, got {n}")));
    }

    let mut hyper = Hyperparams { alpha: 0.0, ..config.hyperparams.clone() };
    if let Some(p) = req.perplexity {
        hyper.perplexity = p;
    }
    if let Some(l) = req.lambda {
        hyper.lambda = l;
    }
    if let Some(k) = req.iterations {
        hyper.iterations = k;
    }
    if let Some(lr) = req.learning_rate {
        hyper.learning_rate = lr;
    }
    if let Some(s) = req.seed {
        hyper.seed = s;
    }
    hyper.validate().map_err(bad)?;
    // Small sessions cannot support the default perplexity of 30.
    hyper.perplexity = hyper.perplexity.min((n - 1) as f64 / 3.0).max(2.0);
    hyper.validate_for(n).map_err(bad)?;

    let embedding = EmbeddingState::random(n, probabilities.m(), hyper.seed).map_err(bad)?;
    Ok(SessionData {
        features: Arc::new(features),
        probabilities: Arc::new(probabilities),
        labels: vec![None; n],
        model: None,
        embedding,
        mlp: MlpConfig { seed: hyper.seed, ..config.mlp.clone() },
        hyper,
        running: false,
        job: 0,
        frames: Vec::new(),
        next_seq: 0,
        pd: None,
        last_cost: None,
        last_error: None,
        test_accuracy: None,
        test_set,
    })
}

/// Immutable copy of a session's state.
#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub points: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
    pub class_names: Vec<String>,
    pub alpha: f64,
    pub lambda: f64,
    pub iteration: usize,
    pub running: bool,
    pub job: u64,
    pub label_counts: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    /// False until the first retrain; clients show an untrained colour.
    pub trained: bool,
    pub predicted: Vec<usize>,
    pub probabilities_summary: Vec<f64>,
    pub test_accuracy: Option<f64>,
    /// Class-constrained cost of the last completed job.
    pub cost: Option<f64>,
    pub last_error: Option<String>,
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let s = state.session(&id)?;
    let d = s.lock();
    Ok(Json(Snapshot {
        id: s.id.clone(),
        points: session::rows(&d.embedding.points),
        landmarks: session::rows(&d.embedding.landmarks),
        class_names: d.probabilities.class_names().to_vec(),
        alpha: d.hyper.alpha,
        lambda: d.hyper.lambda,
        iteration: d.embedding.iteration,
        running: d.running,
        job: d.job,
        label_counts: d.label_counts(),
        labels: d.labels.clone(),
        trained: d.model.is_some(),
        predicted: d.probabilities.argmax_labels(),
        probabilities_summary: d.probabilities.max_probabilities(),
        test_accuracy: d.test_accuracy,
        cost: d.last_cost.as_ref().map(|c| c.c_d),
        last_error: d.last_error.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRequest {
    pub alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobResponse {
    pub job: u64,
    pub alpha: f64,
}

async fn set_alpha(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AlphaRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<JobResponse>), ApiError> {
    let s = state.session(&id)?;
    let Json(req) = body?;
    if !(0.0..=1.0).contains(&req.alpha) {
        return Err(ApiError::unprocessable("invalid_alpha", format!("alpha {} is outside [0, 1]", req.alpha)));
    }
    let job = s.start_warm(req.alpha, state.config().frame_every)?;
    Ok((StatusCode::ACCEPTED, Json(JobResponse { job, alpha: req.alpha })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub indices: Vec<usize>,
    pub class: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub label_counts: Vec<usize>,
}

async fn label_instances(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<LabelResponse>, ApiError> {
    let s = state.session(&id)?;
    let Json(req) = body?;
    Ok(Json(LabelResponse { label_counts: s.label(&req.indices, req.class)? }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub test_accuracy: f64,
    pub new_alpha: f64,
    pub job: u64,
}

async fn retrain(State(state): State<AppState>, Path(id): Path<String>) -> Result<(StatusCode, Json<RetrainResponse>), ApiError> {
    let s = state.session(&id)?;
    let every = state.config().frame_every;
    let (test_accuracy, new_alpha, job) = tokio::task::spawn_blocking(move || s.retrain(every))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::ACCEPTED, Json(RetrainResponse { test_accuracy, new_alpha, job })))
}

#[derive(Debug, Deserialize)]
pub struct FramesQuery {
    #[serde(default)]
    pub since: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FramesResponse {
    /// Frames of the current job with `seq >= since`, in publication order.
    pub frames: Vec<Frame>,
    /// Pass as `since` on the next poll.
    pub next: u64,
    pub running: bool,
}

async fn frames(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<FramesQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<FramesResponse>, ApiError> {
    let s = state.session(&id)?;
    let Query(q) = query?;
    let d = s.lock();
    Ok(Json(FramesResponse {
        frames: d.frames.iter().filter(|f| f.seq >= q.since).cloned().collect(),
        next: d.next_seq,
        running: d.running,
    }))
}
