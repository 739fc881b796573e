//! One-hidden-layer ReLU perceptron with a softmax head, trained by
//! mini-batch SGD on cross-entropy. Supplies class probabilities for the
//! experiments and the interactive labeling loop.
//!
//! Inputs are z-scored with statistics frozen at the first (cold) training
//! call; incremental updates reuse them so earlier weights stay meaningful.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, ClassProbabilityMatrix};

const BLOB_FORMAT: &str = "cctsne-mlp";
const BLOB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 100, learning_rate: 0.05, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub input_mean: Array1<f64>,
    pub input_scale: Array1<f64>,
}

impl MlpModel {
    /// All-zero weights: predicts the uniform distribution everywhere.
    pub fn zeros(d: usize, hidden: usize, m: usize) -> Self {
        Self {
            w1: Array2::zeros((d, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, m)),
            b2: Array1::zeros(m),
            input_mean: Array1::zeros(d),
            input_scale: Array1::ones(d),
        }
    }

    fn random(x: ArrayView2<'_, f64>, hidden: usize, m: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = x.ncols();
        let input_mean = x.mean_axis(Axis(0)).expect("non-empty training set");
        let input_scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        let he = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("valid std");
        let xavier = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid std");
        Self {
            w1: Array2::from_shape_fn((d, hidden), |_| he.sample(rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, m), |_| xavier.sample(rng)),
            b2: Array1::zeros(m),
            input_mean,
            input_scale,
        }
    }

    pub fn n_features(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.ncols()
    }

    fn normalize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.input_mean) * &self.input_scale
    }

    fn hidden(&self, xn: &Array2<f64>) -> Array2<f64> {
        (xn.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0))
    }

    /// Pre-softmax scores.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch { what: "feature columns", expected: self.n_features(), actual: x.ncols() });
        }
        let h = self.hidden(&self.normalize(x));
        Ok(h.dot(&self.w2) + &self.b2)
    }

    /// Versioned JSON text blob.
    pub fn to_blob(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Blob<'a> {
            format: &'a str,
            version: u32,
            model: &'a MlpModel,
        }
        Ok(serde_json::to_string(&Blob { format: BLOB_FORMAT, version: BLOB_VERSION, model: self })?)
    }

    pub fn from_blob(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Blob {
            format: String,
            version: u32,
            model: MlpModel,
        }
        let blob: Blob = serde_json::from_str(text)?;
        if blob.format != BLOB_FORMAT {
            return Err(Error::InvalidModel(format!("unknown format `{}`", blob.format)));
        }
        if blob.version != BLOB_VERSION {
            return Err(Error::InvalidModel(format!("unsupported version {}", blob.version)));
        }
        let model = blob.model;
        let (d, h, m) = (model.w1.nrows(), model.w1.ncols(), model.w2.ncols());
        if model.b1.len() != h || model.w2.nrows() != h || model.b2.len() != m || model.input_mean.len() != d || model.input_scale.len() != d {
            return Err(Error::InvalidModel("inconsistent parameter shapes".into()));
        }
        Ok(model)
    }
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    logits
}

/// Cross-entropy SGD. With `init` the given parameters are refined in place
/// of a fresh initialization.
pub fn train(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    config: &MlpConfig,
    init: Option<MlpModel>,
) -> Result<MlpModel> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { what: "label count", expected: n, actual: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidSize(format!("label {bad} outside {n_classes} classes")));
    }
    let mut seen = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::SingleClassTrainingSet);
    }
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::InvalidSize("hidden width and batch size must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = match init {
        Some(m) => {
            if m.n_features() != x.ncols() || m.n_classes() != n_classes {
                return Err(Error::DimensionMismatch {
                    what: "initial model shape",
                    expected: x.ncols(),
                    actual: m.n_features(),
                });
            }
            m
        }
        None => MlpModel::random(x, config.hidden, n_classes, &mut rng),
    };

    let xn = model.normalize(x);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = xn.select(Axis(0), batch);
            let pre = xb.dot(&model.w1) + &model.b1;
            let h = pre.mapv(|v| v.max(0.0));
            let mut delta = softmax_rows(h.dot(&model.w2) + &model.b2);
            for (r, &i) in batch.iter().enumerate() {
                delta[[r, labels[i]]] -= 1.0;
            }
            delta /= batch.len() as f64;

            let grad_w2 = h.t().dot(&delta);
            let grad_b2 = delta.sum_axis(Axis(0));
            let mut dh = delta.dot(&model.w2.t());
            dh.zip_mut_with(&pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let grad_w1 = xb.t().dot(&dh);
            let grad_b1 = dh.sum_axis(Axis(0));

            let lr = config.learning_rate;
            model.w2.scaled_add(-lr, &grad_w2);
            model.b2.scaled_add(-lr, &grad_b2);
            model.w1.scaled_add(-lr, &grad_w1);
            model.b1.scaled_add(-lr, &grad_b1);
        }
    }
    Ok(model)
}

/// Softmax outputs for every row of `x`.
pub fn predict_proba(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<ClassProbabilityMatrix> {
    ClassProbabilityMatrix::new(softmax_rows(model.logits(x)?), None)
}

pub fn predict(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    Ok(model.logits(x)?.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
}

/// Fraction of argmax predictions equal to `labels`.
pub fn accuracy(model: &MlpModel, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if x.nrows() == 0 || labels.is_empty() {
        return Err(Error::EmptySet);
    }
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch { what: "label count", expected: x.nrows(), actual: labels.len() });
    }
    let hits = predict(model, x)?.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Structure balance driven by classifier quality: `alpha = accuracy^2`.
pub fn alpha_for(test_accuracy: f64) -> f64 {
    let a = test_accuracy.clamp(0.0, 1.0);
    a * a
}

/// Seeded stratified split: within each class, `round(len * test_fraction)`
/// members go to the test side. Returns `(train, test)` index lists, sorted.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
