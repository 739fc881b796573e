//! Class-constrained t-SNE: joint gradient descent on data points `Y` and
//! class landmarks `V`.
//!
//! Points minimize `C_d = (1 - alpha) fc1 + alpha fc2`, landmarks minimize
//! `C_c = fc2`, where
//!
//! * `fc1 = KL(P^d || Q^d)` is the ordinary t-SNE cost, and
//! * `fc2 = (1/n) sum_i [KL(P^c_i || Q^c_i) + lambda (1/m) sum_u p^c_iu |y_i - v_u|^2]`.
//!
//! Both position sets move against their gradients with plain momentum.
//! Points step with rate `eta`, landmarks with `eta * m / n`. The two updates of
//! one iteration are simultaneous: both gradients come from the previous state.

use std::ops::ControlFlow;

use ndarray::{Array2, ArrayView2};

use crate::affinities::PairwiseAffinityMatrix;
use crate::error::{Error, Result};
use crate::lowdim::{class_forces, low_dim_class, low_dim_pairwise, momentum_update, pairwise_forces};
use crate::model::{EmbeddingState, Hyperparams};

/// The cost terms at one configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostBreakdown {
    pub fc1: f64,
    /// `(1/n) sum_i KL(P^c_i || Q^c_i)`.
    pub fc2_kl: f64,
    /// Average distance penalty, before weighting by lambda.
    pub fc2_penalty: f64,
    pub c_d: f64,
    pub c_c: f64,
}

impl CostBreakdown {
    fn assemble(fc1: f64, fc2_kl: f64, fc2_penalty: f64, alpha: f64, lambda: f64) -> Self {
        let fc2 = fc2_kl + lambda * fc2_penalty;
        Self { fc1, fc2_kl, fc2_penalty, c_d: (1.0 - alpha) * fc1 + alpha * fc2, c_c: fc2 }
    }
}

fn check_shapes(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    points: ArrayView2<'_, f64>,
    landmarks: ArrayView2<'_, f64>,
) -> Result<()> {
    let n = pd.n();
    for (what, actual) in [
        ("class affinity rows", pc.nrows()),
        ("point rows", points.nrows()),
    ] {
        if actual != n {
            return Err(Error::DimensionMismatch { what, expected: n, actual });
        }
    }
    if landmarks.nrows() != pc.ncols() {
        return Err(Error::DimensionMismatch {
            what: "landmark rows vs class count",
            expected: pc.ncols(),
            actual: landmarks.nrows(),
        });
    }
    if points.ncols() != 2 || landmarks.ncols() != 2 {
        return Err(Error::InvalidSize("positions must be 2D".into()));
    }
    Ok(())
}

/// Evaluates every cost term from explicitly materialized `Q^d` and `Q^c`.
pub fn cost(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    points: ArrayView2<'_, f64>,
    landmarks: ArrayView2<'_, f64>,
    alpha: f64,
    lambda: f64,
) -> CostBreakdown {
    let (n, m) = (points.nrows(), landmarks.nrows());
    let (qd, _) = low_dim_pairwise(points);
    let fc1: f64 = pd
        .values()
        .iter()
        .zip(qd.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum();

    let (qc, _) = low_dim_class(points, landmarks);
    let mut kl = 0.0;
    let mut penalty = 0.0;
    for i in 0..n {
        for u in 0..m {
            let p = pc[[i, u]];
            if p > 0.0 {
                kl += p * (p / qc[[i, u]]).ln();
            }
            let dx = points[[i, 0]] - landmarks[[u, 0]];
            let dy = points[[i, 1]] - landmarks[[u, 1]];
            penalty += p * (dx * dx + dy * dy) / m as f64;
        }
    }
    CostBreakdown::assemble(fc1, kl / n as f64, penalty / n as f64, alpha, lambda)
}

fn blend(fc1_grad: Array2<f64>, fc2_grad: ArrayView2<'_, f64>, alpha: f64) -> Array2<f64> {
    let mut g = fc1_grad;
    g.zip_mut_with(&fc2_grad, |a, &b| *a = (1.0 - alpha) * *a + alpha * b);
    g
}

/// `dC_d/dY = (1 - alpha) dfc1/dY + alpha dfc2/dY`.
pub fn grad_data_points(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    points: ArrayView2<'_, f64>,
    landmarks: ArrayView2<'_, f64>,
    alpha: f64,
    lambda: f64,
) -> Array2<f64> {
    let pair = pairwise_forces(pd.values(), points, 1.0);
    let class = class_forces(pc, points, landmarks, lambda);
    blend(pair.grad, class.point_grad.view(), alpha)
}

/// `dC_c/dV`.
pub fn grad_landmarks(
    pc: ArrayView2<'_, f64>,
    points: ArrayView2<'_, f64>,
    landmarks: ArrayView2<'_, f64>,
    lambda: f64,
) -> Array2<f64> {
    class_forces(pc, points, landmarks, lambda).landmark_grad
}

/// One simultaneous momentum step on points and landmarks.
///
/// `exaggeration` multiplies `P^d` in the point gradient (1 outside the early
/// phase of a cold start). Returns the cost of the state before the update.
pub fn step(
    state: &mut EmbeddingState,
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    h: &Hyperparams,
    exaggeration: f64,
) -> Result<CostBreakdown> {
    let (n, m) = (state.n(), state.m());
    let pair = pairwise_forces(pd.values(), state.points.view(), exaggeration);
    let class = class_forces(pc, state.points.view(), state.landmarks.view(), h.lambda);
    let cost = CostBreakdown::assemble(pair.kl, class.kl, class.penalty, h.alpha, h.lambda);

    let point_grad = blend(pair.grad, class.point_grad.view(), h.alpha);
    let mu = h.momentum(state.iteration);
    momentum_update(&mut state.points, &mut state.point_velocity, point_grad.view(), mu, h.learning_rate);
    if !h.freeze_landmarks {
        let rate = h.learning_rate * m as f64 / n as f64;
        momentum_update(&mut state.landmarks, &mut state.landmark_velocity, class.landmark_grad.view(), mu, rate);
    }
    if !state.is_finite() {
        return Err(Error::NonFiniteUpdate { iteration: state.iteration });
    }
    state.iteration += 1;
    Ok(cost)
}

/// Final state and per-iteration costs of one optimization run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: EmbeddingState,
    /// Cost before each of the `K` updates.
    pub trace: Vec<CostBreakdown>,
}

/// Runs `h.iterations` steps.
///
/// Without `init` the layout is drawn from `N(0, 1e-4 I)` with `h.seed` and
/// `P^d` is exaggerated for the first `h.early_exaggeration_iters` steps. With
/// `init` the run is a warm start: positions are kept, momentum and the
/// iteration counter restart, and there is no exaggeration.
pub fn run(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    h: &Hyperparams,
    init: Option<&EmbeddingState>,
) -> Result<RunOutput> {
    run_observed(pd, pc, h, init, 0, |_| ControlFlow::Continue(()))
}

/// [`run`] that hands the state to `observer` before the first step and then
/// after every `every`-th step (never when `every == 0`). Breaking from the
/// observer stops the run early.
pub fn run_observed(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    h: &Hyperparams,
    init: Option<&EmbeddingState>,
    every: usize,
    mut observer: impl FnMut(&EmbeddingState) -> ControlFlow<()>,
) -> Result<RunOutput> {
    h.validate()?;
    let (mut state, warm) = match init {
        Some(s) => (s.restarted(), true),
        None => (EmbeddingState::random(pd.n(), pc.ncols(), h.seed)?, false),
    };
    check_shapes(pd, pc, state.points.view(), state.landmarks.view())?;

    let mut trace = Vec::with_capacity(h.iterations);
    if every > 0 && observer(&state).is_break() {
        return Ok(RunOutput { state, trace });
    }
    for k in 0..h.iterations {
        let exaggeration = if !warm && k < h.early_exaggeration_iters { h.early_exaggeration } else { 1.0 };
        trace.push(step(&mut state, pd, pc, h, exaggeration)?);
        if every > 0 && (k + 1) % every == 0 && observer(&state).is_break() {
            break;
        }
    }
    Ok(RunOutput { state, trace })
}

/// One cell of an alpha sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub alpha: f64,
    /// Positions the run started from (the previous cell's final state for warm starts).
    pub initial: EmbeddingState,
    pub output: RunOutput,
}

/// Runs each alpha in order, warm-starting every run after the first from its
/// predecessor's final positions. The first run is cold unless `init` is given.
pub fn sweep_alpha(
    pd: &PairwiseAffinityMatrix,
    pc: ArrayView2<'_, f64>,
    h: &Hyperparams,
    alphas: &[f64],
    init: Option<&EmbeddingState>,
) -> Result<Vec<SweepCell>> {
    if alphas.is_empty() {
        return Err(Error::InvalidSize("alpha sweep needs at least one value".into()));
    }
    let mut cells: Vec<SweepCell> = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let hk = Hyperparams { alpha, ..h.clone() };
        let wrap = |e: Error| Error::SweepFailed { alpha, source: Box::new(e) };
        let start = cells.last().map(|c| &c.output.state).or(init);
        let output = run(pd, pc, &hk, start).map_err(wrap)?;
        let initial = match start {
            Some(s) => s.restarted(),
            None => EmbeddingState::random(pd.n(), pc.ncols(), h.seed).map_err(wrap)?,
        };
        cells.push(SweepCell { alpha, initial, output });
    }
    Ok(cells)
}

/// Learning rate at which the quadratic distance penalty alone is a
/// contraction under momentum descent, with a factor-two margin.
///
/// The penalty curvature grows linearly in lambda, so large lambda values
/// diverge at the usual `eta = 200`. `momentum` should be the smallest value
/// of the schedule, where the stable range is narrowest.
pub fn penalty_stable_learning_rate(pc: ArrayView2<'_, f64>, lambda: f64, momentum: f64) -> f64 {
    let (n, m) = (pc.nrows() as f64, pc.ncols() as f64);
    let max_class_mass = pc.columns().into_iter().map(|c| c.sum()).fold(0.0, f64::max);
    // Point curvature: 2 lambda / (n m). Landmark curvature times its rate scale m/n: 2 lambda N_u / n^2.
    let point_curv = 2.0 * lambda / (n * m);
    let landmark_curv = 2.0 * lambda * max_class_mass / (n * n);
    // The coupled point/landmark Hessian is bounded by twice the largest
    // diagonal term; heavy-ball descent is stable below rate * curvature = 2 (1 + mu).
    let bound = 2.0 * point_curv.max(landmark_curv);
    (1.0 + momentum) / bound
}
