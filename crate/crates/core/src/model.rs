//! Domain types shared by every stage of the pipeline, plus input validation
//! and seeded random-number provisioning.
//!
//! All stochastic steps of a run draw from one [`ChaCha8Rng`] seeded from
//! [`Hyperparams::seed`]. The draw order of a cold start is: the `n` data-point
//! rows first, then the `m` landmark rows, each row as `(x, y)`.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums accepted by [`ClassProbabilityMatrix::new`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Standard deviation of the initial layout, i.e. `N(0, 1e-4 I)`.
pub const INIT_STD: f64 = 1e-2;

/// Instance features, `n x d`, every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n < 2 {
            return Err(Error::InvalidSize(format!("need at least 2 instances, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidSize("need at least one feature column".into()));
        }
        check_finite(values.view())?;
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Row-stochastic class-probability matrix `T`, `n x m`.
///
/// Row `i` is the distribution `p^c_i` over the `m` classes. Rows are
/// renormalized to sum exactly to one on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityMatrix {
    values: Array2<f64>,
    class_names: Vec<String>,
}

impl ClassProbabilityMatrix {
    /// Validates and renormalizes. Missing names default to `c0, c1, ...`.
    pub fn new(mut values: Array2<f64>, class_names: Option<Vec<String>>) -> Result<Self> {
        let (n, m) = values.dim();
        if n < 1 {
            return Err(Error::InvalidSize("probability matrix has no rows".into()));
        }
        if m < 1 {
            return Err(Error::InvalidSize("probability matrix has no classes".into()));
        }
        check_finite(values.view())?;
        for (i, mut row) in values.rows_mut().into_iter().enumerate() {
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::NotRowStochastic { row: i, sum: row.sum() });
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::NotRowStochastic { row: i, sum });
            }
            row.mapv_inplace(|v| v / sum);
        }
        let class_names = match class_names {
            Some(names) if names.len() != m => {
                return Err(Error::DimensionMismatch {
                    what: "class name count",
                    expected: m,
                    actual: names.len(),
                })
            }
            Some(names) => names,
            None => (0..m).map(|u| format!("c{u}")).collect(),
        };
        Ok(Self { values, class_names })
    }

    /// Every row uniform over `m` classes; the untrained-model state.
    pub fn uniform(n: usize, class_names: Vec<String>) -> Result<Self> {
        let m = class_names.len();
        if m == 0 {
            return Err(Error::InvalidSize("no classes".into()));
        }
        Self::new(Array2::from_elem((n, m), 1.0 / m as f64), Some(class_names))
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Most probable class per row; ties go to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.values.rows().into_iter().map(|row| argmax(row.iter().copied())).collect()
    }

    /// Highest class probability per row.
    pub fn max_probabilities(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (idx, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = idx;
            best_value = v;
        }
    }
    best
}

/// Validates a feature/probability pair and checks that both describe the
/// same instances.
pub fn validate_inputs(
    features: ArrayView2<'_, f64>,
    probabilities: ArrayView2<'_, f64>,
    class_names: Option<Vec<String>>,
) -> Result<(FeatureMatrix, ClassProbabilityMatrix)> {
    if features.nrows() != probabilities.nrows() {
        return Err(Error::DimensionMismatch {
            what: "instance count of probabilities vs features",
            expected: features.nrows(),
            actual: probabilities.nrows(),
        });
    }
    let x = FeatureMatrix::new(features.to_owned())?;
    let t = ClassProbabilityMatrix::new(probabilities.to_owned(), class_names)?;
    Ok((x, t))
}

pub(crate) fn check_finite(values: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row, col });
        }
    }
    Ok(())
}

/// 2D positions of data points and class landmarks together with the
/// momentum buffers of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub points: Array2<f64>,
    pub landmarks: Array2<f64>,
    /// Iterations completed in the current optimization run.
    pub iteration: usize,
    pub point_velocity: Array2<f64>,
    pub landmark_velocity: Array2<f64>,
}

impl EmbeddingState {
    /// Fresh state at iteration zero with zeroed velocities.
    pub fn from_positions(points: Array2<f64>, landmarks: Array2<f64>) -> Result<Self> {
        if points.ncols() != 2 || landmarks.ncols() != 2 {
            return Err(Error::InvalidSize("embedding positions must be 2D".into()));
        }
        check_finite(points.view())?;
        check_finite(landmarks.view())?;
        let point_velocity = Array2::zeros(points.raw_dim());
        let landmark_velocity = Array2::zeros(landmarks.raw_dim());
        Ok(Self { points, landmarks, iteration: 0, point_velocity, landmark_velocity })
    }

    /// Cold-start layout: points then landmarks drawn from `N(0, 1e-4 I)`.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("cannot initialize zero points".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = gaussian_rows(&mut rng, n);
        let landmarks = gaussian_rows(&mut rng, m);
        Self::from_positions(points, landmarks)
    }

    /// Copy of the positions restarted at iteration zero with zero momentum,
    /// the starting point of a warm-started run.
    pub fn restarted(&self) -> Self {
        Self {
            points: self.points.clone(),
            landmarks: self.landmarks.clone(),
            iteration: 0,
            point_velocity: Array2::zeros(self.points.raw_dim()),
            landmark_velocity: Array2::zeros(self.landmarks.raw_dim()),
        }
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn m(&self) -> usize {
        self.landmarks.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().chain(self.landmarks.iter()).all(|v| v.is_finite())
    }
}

/// `rows x 2` draws from `N(0, 1e-4 I)` with a fresh generator for `seed`.
pub fn seeded_gaussian_init(rows: usize, seed: u64) -> Result<Array2<f64>> {
    if rows == 0 {
        return Err(Error::InvalidSize("cannot initialize zero rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gaussian_rows(&mut rng, rows))
}

pub(crate) fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("constant std is valid");
    let mut out = Array2::zeros((rows, 2));
    for v in out.iter_mut() {
        *v = normal.sample(rng);
    }
    out
}

/// Optimization settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Balance between data-feature structure (0) and class-probability structure (1).
    pub alpha: f64,
    /// Weight of the point-to-landmark distance penalty.
    pub lambda: f64,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum_switch_iter: usize,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub early_exaggeration: f64,
    pub early_exaggeration_iters: usize,
    pub seed: u64,
    /// Keep landmarks where they are and optimize points only.
    pub freeze_landmarks: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            lambda: 0.25,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum_switch_iter: 250,
            momentum_early: 0.5,
            momentum_late: 0.8,
            early_exaggeration: 4.0,
            early_exaggeration_iters: 100,
            seed: 0,
            freeze_landmarks: false,
        }
    }
}

impl Hyperparams {
    /// Checks ranges that do not depend on the data size.
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Error {
            Error::InvalidHyperparameter { name, reason: reason.into() }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(bad("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(bad("lambda", format!("{} must be positive", self.lambda)));
        }
        if !(self.perplexity >= 2.0 && self.perplexity.is_finite()) {
            return Err(bad("perplexity", format!("{} must be at least 2", self.perplexity)));
        }
        if self.iterations == 0 {
            return Err(bad("iterations", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        for (name, mu) in [("momentum_early", self.momentum_early), ("momentum_late", self.momentum_late)] {
            if !(0.0..1.0).contains(&mu) {
                return Err(bad(name, format!("{mu} is outside [0, 1)")));
            }
        }
        if !(self.early_exaggeration >= 1.0 && self.early_exaggeration.is_finite()) {
            return Err(bad("early_exaggeration", "must be at least 1"));
        }
        Ok(())
    }

    /// Also checks `perplexity < n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.perplexity >= n as f64 {
            return Err(Error::InvalidHyperparameter {
                name: "perplexity",
                reason: format!("{} must be below the instance count {n}", self.perplexity),
            });
        }
        Ok(())
    }

    pub fn momentum(&self, iteration: usize) -> f64 {
        if iteration < self.momentum_switch_iter {
            self.momentum_early
        } else {
            self.momentum_late
        }
    }
}
