//! Per-session state, optimizer jobs and on-disk persistence.

use std::ops::ControlFlow;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use cctsne::affinities::{data_affinities, PairwiseAffinityMatrix};
use cctsne::classifier::{self, MlpConfig, MlpModel};
use cctsne::optimizer::{run_observed, CostBreakdown};
use cctsne::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix, Hyperparams};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Share of labeled instances held out for accuracy when no explicit test set exists.
pub const HOLDOUT_FRACTION: f64 = 1.0 / 3.0;

/// One published optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    pub job: u64,
    pub iteration: usize,
    pub points: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
}

/// Ground truth supplied with a preloaded dataset: an explicit test set.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub truth: Vec<usize>,
    pub indices: Vec<usize>,
}

pub struct SessionData {
    pub features: Arc<FeatureMatrix>,
    pub probabilities: Arc<ClassProbabilityMatrix>,
    pub labels: Vec<Option<usize>>,
    pub model: Option<MlpModel>,
    pub embedding: EmbeddingState,
    pub hyper: Hyperparams,
    pub mlp: MlpConfig,
    pub running: bool,
    pub job: u64,
    pub frames: Vec<Frame>,
    pub next_seq: u64,
    pub pd: Option<Arc<PairwiseAffinityMatrix>>,
    pub last_cost: Option<CostBreakdown>,
    pub last_error: Option<String>,
    pub test_accuracy: Option<f64>,
    pub test_set: Option<Arc<TestSet>>,
}

impl SessionData {
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.probabilities.m()];
        for l in self.labels.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    fn publish(&mut self, state: &EmbeddingState) {
        let frame = Frame {
            seq: self.next_seq,
            job: self.job,
            iteration: state.iteration,
            points: rows(&state.points),
            landmarks: rows(&state.landmarks),
        };
        self.next_seq += 1;
        self.frames.push(frame);
        self.embedding = state.clone();
    }
}

pub fn rows(a: &Array2<f64>) -> Vec<[f64; 2]> {
    a.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

pub struct Session {
    pub id: String,
    data: Mutex<SessionData>,
}

/// What a job needs, captured while the session lock is held.
struct JobInput {
    job: u64,
    features: Arc<FeatureMatrix>,
    probabilities: Arc<ClassProbabilityMatrix>,
    pd: Option<Arc<PairwiseAffinityMatrix>>,
    init: Option<EmbeddingState>,
    hyper: Hyperparams,
}

impl Session {
    pub fn new(id: String, data: SessionData) -> Self {
        Self { id, data: Mutex::new(data) }
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionData> {
        // A panicking job must not wedge the session; its state is still consistent.
        self.data.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Marks the session running and returns the job inputs, or 409 if a job
    /// is already active. Check and set happen under one lock.
    fn claim(&self, alpha: Option<f64>, cold: bool) -> Result<JobInput, ApiError> {
        claim_locked(&mut self.lock(), alpha, cold)
    }

    /// Cold-start embedding of a new or restored session.
    pub fn start_cold(self: &Arc<Self>, frame_every: usize) -> Result<u64, ApiError> {
        let input = self.claim(None, true)?;
        Ok(self.spawn(input, frame_every))
    }

    /// Warm-started re-optimization at `alpha`.
    pub fn start_warm(self: &Arc<Self>, alpha: f64, frame_every: usize) -> Result<u64, ApiError> {
        let input = self.claim(Some(alpha), false)?;
        Ok(self.spawn(input, frame_every))
    }

    fn spawn(self: &Arc<Self>, input: JobInput, frame_every: usize) -> u64 {
        let job = input.job;
        let session = self.clone();
        tokio::task::spawn_blocking(move || session.execute(input, frame_every));
        job
    }

    fn execute(&self, input: JobInput, frame_every: usize) {
        let JobInput { job, features, probabilities, pd, init, hyper } = input;
        let pd = match pd {
            Some(pd) => pd,
            None => match data_affinities(&features, hyper.perplexity) {
                Ok(pd) => {
                    let pd = Arc::new(pd);
                    self.lock().pd = Some(pd.clone());
                    pd
                }
                Err(e) => return self.finish(job, Err(e.to_string())),
            },
        };
        let every = frame_every.max(1);
        let result = run_observed(&pd, probabilities.values(), &hyper, init.as_ref(), every, |state| {
            self.lock().publish(state);
            ControlFlow::Continue(())
        });
        match result {
            Ok(out) => {
                {
                    let mut d = self.lock();
                    if d.frames.last().map(|f| f.iteration) != Some(out.state.iteration) {
                        d.publish(&out.state);
                    }
                    d.embedding = out.state;
                    d.last_cost = out.trace.last().cloned();
                }
                self.finish(job, Ok(()));
            }
            Err(e) => self.finish(job, Err(e.to_string())),
        }
    }

    fn finish(&self, job: u64, result: Result<(), String>) {
        let mut d = self.lock();
        if d.job != job {
            return;
        }
        if let Err(msg) = result {
            log::warn!("session {}: job {job} failed: {msg}", self.id);
            d.last_error = Some(msg);
        }
        d.running = false;
    }

    /// Assigns `class` to every index; overwrites earlier labels.
    pub fn label(&self, indices: &[usize], class: usize) -> Result<Vec<usize>, ApiError> {
        let mut d = self.lock();
        let (n, m) = (d.labels.len(), d.probabilities.m());
        if class >= m {
            return Err(ApiError::unprocessable("invalid_class", format!("class {class} outside 0..{m}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(ApiError::unprocessable("invalid_index", format!("index {bad} outside 0..{n}")));
        }
        for &i in indices {
            d.labels[i] = Some(class);
        }
        Ok(d.label_counts())
    }

    /// Updates the classifier with the labeled instances, evaluates it, swaps
    /// in its probabilities and launches a warm re-embedding at `accuracy^2`.
    pub fn retrain(self: &Arc<Self>, frame_every: usize) -> Result<(f64, f64, u64), ApiError> {
        let (features, labels, model, mlp, test_set, class_names, seed) = {
            let d = self.lock();
            if d.running {
                return Err(ApiError::busy());
            }
            (
                d.features.clone(),
                d.labels.clone(),
                d.model.clone(),
                d.mlp.clone(),
                d.test_set.clone(),
                d.probabilities.class_names().to_vec(),
                d.hyper.seed,
            )
        };
        let m = class_names.len();
        let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();

        let (train_idx, test_idx, test_truth): (Vec<usize>, Vec<usize>, Vec<usize>) = match &test_set {
            Some(ts) => {
                let train: Vec<usize> = labeled.iter().copied().filter(|i| ts.indices.binary_search(i).is_err()).collect();
                let truth = ts.indices.iter().map(|&i| ts.truth[i]).collect();
                (train, ts.indices.clone(), truth)
            }
            None => {
                let y: Vec<usize> = labeled.iter().map(|&i| labels[i].unwrap()).collect();
                let (tr, te) = classifier::stratified_split(&y, HOLDOUT_FRACTION, seed);
                let test: Vec<usize> = te.iter().map(|&k| labeled[k]).collect();
                let truth = test.iter().map(|&i| labels[i].unwrap()).collect();
                (tr.iter().map(|&k| labeled[k]).collect(), test, truth)
            }
        };
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i].unwrap()).collect();
        let mut distinct = train_y.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(ApiError::unprocessable(
                "single_class_training_set",
                "training needs labeled instances from at least two classes",
            ));
        }
        if test_idx.is_empty() {
            return Err(ApiError::unprocessable("no_test_instances", "label more instances so some can be held out for evaluation"));
        }

        let x = features.values();
        let x_train = x.select(Axis(0), &train_idx);
        let model = classifier::train(x_train.view(), &train_y, m, &MlpConfig { seed, ..mlp }, model)
            .map_err(|e| ApiError::unprocessable("training_failed", e.to_string()))?;
        let accuracy = classifier::accuracy(&model, x.select(Axis(0), &test_idx).view(), &test_truth)
            .map_err(|e| ApiError::unprocessable("evaluation_failed", e.to_string()))?;
        let raw = classifier::predict_proba(&model, x).map_err(|e| ApiError::internal(e.to_string()))?;
        let probs = ClassProbabilityMatrix::new(raw.values().to_owned(), Some(class_names)).map_err(|e| ApiError::internal(e.to_string()))?;
        let alpha = classifier::alpha_for(accuracy);

        let input = {
            let mut d = self.lock();
            if d.running {
                return Err(ApiError::busy());
            }
            d.model = Some(model);
            d.probabilities = Arc::new(probs);
            d.test_accuracy = Some(accuracy);
            claim_locked(&mut d, Some(alpha), false)?
        };
        let job = self.spawn(input, frame_every);
        Ok((accuracy, alpha, job))
    }

    pub fn to_record(&self) -> SessionRecord {
        let d = self.lock();
        SessionRecord {
            id: self.id.clone(),
            features: d.features.values().to_owned(),
            probabilities: d.probabilities.values().to_owned(),
            class_names: d.probabilities.class_names().to_vec(),
            labels: d.labels.clone(),
            model: d.model.as_ref().and_then(|m| m.to_blob().ok()),
            points: d.embedding.points.clone(),
            landmarks: d.embedding.landmarks.clone(),
            hyper: d.hyper.clone(),
            mlp: d.mlp.clone(),
            test_accuracy: d.test_accuracy,
            truth: d.test_set.as_ref().map(|t| t.truth.clone()),
            test_indices: d.test_set.as_ref().map(|t| t.indices.clone()),
        }
    }

    pub fn from_record(r: SessionRecord) -> Result<Self, String> {
        let features = FeatureMatrix::new(r.features).map_err(|e| e.to_string())?;
        let probabilities = ClassProbabilityMatrix::new(r.probabilities, Some(r.class_names)).map_err(|e| e.to_string())?;
        let embedding = EmbeddingState::from_positions(r.points, r.landmarks).map_err(|e| e.to_string())?;
        if embedding.n() != features.n() || embedding.m() != probabilities.m() || r.labels.len() != features.n() {
            return Err("record dimensions disagree".into());
        }
        let model = r.model.map(|b| MlpModel::from_blob(&b)).transpose().map_err(|e| e.to_string())?;
        let test_set = match (r.truth, r.test_indices) {
            (Some(truth), Some(indices)) => Some(Arc::new(TestSet { truth, indices })),
            _ => None,
        };
        let data = SessionData {
            features: Arc::new(features),
            probabilities: Arc::new(probabilities),
            labels: r.labels,
            model,
            embedding,
            hyper: r.hyper,
            mlp: r.mlp,
            running: false,
            job: 0,
            frames: Vec::new(),
            next_seq: 0,
            pd: None,
            last_cost: None,
            last_error: None,
            test_accuracy: r.test_accuracy,
            test_set,
        };
        Ok(Self::new(r.id, data))
    }
}

fn claim_locked(d: &mut SessionData, alpha: Option<f64>, cold: bool) -> Result<JobInput, ApiError> {
    if d.running {
        return Err(ApiError::busy());
    }
    d.running = true;
    d.job += 1;
    d.frames.clear();
    d.last_error = None;
    if let Some(a) = alpha {
        d.hyper.alpha = a;
    }
    Ok(JobInput {
        job: d.job,
        features: d.features.clone(),
        probabilities: d.probabilities.clone(),
        pd: d.pd.clone(),
        init: if cold { None } else { Some(d.embedding.clone()) },
        hyper: d.hyper.clone(),
    })
}

/// On-disk form of a session.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub features: Array2<f64>,
    pub probabilities: Array2<f64>,
    pub class_names: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub model: Option<String>,
    pub points: Array2<f64>,
    pub landmarks: Array2<f64>,
    pub hyper: Hyperparams,
    pub mlp: MlpConfig,
    pub test_accuracy: Option<f64>,
    pub truth: Option<Vec<usize>>,
    pub test_indices: Option<Vec<usize>>,
}

pub fn write_record(dir: &Path, record: &SessionRecord) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", record.id));
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(record)?)?;
    std::fs::rename(tmp, path)
}

pub fn read_records(dir: &Path) -> std::io::Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        match serde_json::from_slice::<SessionRecord>(&std::fs::read(&p)?) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping unreadable session file {}: {e}", p.display()),
        }
    }
    Ok(out)
}
