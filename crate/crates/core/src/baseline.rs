//! Comparison method: a convex combination of two pairwise KL objectives.
//!
//! The second objective treats each instance's class-probability vector as a
//! feature vector and builds perplexity-calibrated affinities from Euclidean
//! distances between those vectors. Only data points are optimized; there are
//! no class landmarks.
//!
//! Because both terms share `Q`, the gradient of
//! `(1 - alpha) KL(P^d || Q) + alpha KL(P^prob || Q)` equals the t-SNE gradient
//! of the mixed distribution `(1 - alpha) P^d + alpha P^prob`.

use ndarray::{Array2, ArrayView2};

use crate::affinities::{calibrate_conditional, pairwise_squared_distances, symmetrize, PairwiseAffinityMatrix};
use crate::error::{Error, Result};
use crate::lowdim::{low_dim_pairwise, pairwise_forces};
use crate::model::{ClassProbabilityMatrix, Hyperparams};
use crate::tsne::{descend, TsneOutput};

/// Pairwise affinities between instances in class-probability space.
pub fn class_space_affinities(t: &ClassProbabilityMatrix, perplexity: f64) -> Result<PairwiseAffinityMatrix> {
    let d2 = pairwise_squared_distances(t.values());
    let (conditional, _) = calibrate_conditional(d2.view(), perplexity)?;
    Ok(symmetrize(conditional.view()))
}

fn neg_entropy(p: &PairwiseAffinityMatrix) -> f64 {
    p.values().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum()
}

/// `(1 - alpha) KL(P^d || Q) + alpha KL(P^prob || Q)` at `points`.
pub fn baseline_cost(
    pd: &PairwiseAffinityMatrix,
    pprob: &PairwiseAffinityMatrix,
    points: ArrayView2<'_, f64>,
    alpha: f64,
) -> f64 {
    let (q, _) = low_dim_pairwise(points);
    let kl = |p: &PairwiseAffinityMatrix| -> f64 {
        p.values().iter().zip(q.iter()).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
    };
    (1.0 - alpha) * kl(pd) + alpha * kl(pprob)
}

/// Gradient of [`baseline_cost`] with respect to `points`.
pub fn baseline_gradient(
    pd: &PairwiseAffinityMatrix,
    pprob: &PairwiseAffinityMatrix,
    points: ArrayView2<'_, f64>,
    alpha: f64,
) -> Array2<f64> {
    pairwise_forces(pd.mix(pprob, alpha).values(), points, 1.0).grad
}

/// Runs the baseline at `h.alpha`; warm start when `init` is given.
pub fn run_baseline(
    pd: &PairwiseAffinityMatrix,
    pprob: &PairwiseAffinityMatrix,
    h: &Hyperparams,
    init: Option<ArrayView2<'_, f64>>,
) -> Result<TsneOutput> {
    if pd.n() != pprob.n() {
        return Err(Error::DimensionMismatch { what: "baseline affinity sizes", expected: pd.n(), actual: pprob.n() });
    }
    let alpha = h.alpha;
    let mixed = pd.mix(pprob, alpha);
    // KL(mix || Q) differs from the combined objective only by constants in P.
    let offset = -neg_entropy(&mixed) + (1.0 - alpha) * neg_entropy(pd) + alpha * neg_entropy(pprob);
    descend(&mixed, h, init, |forces| forces.kl + offset)
}

/// Baseline counterpart of [`crate::optimizer::sweep_alpha`].
pub fn sweep_baseline(
    pd: &PairwiseAffinityMatrix,
    pprob: &PairwiseAffinityMatrix,
    h: &Hyperparams,
    alphas: &[f64],
    init: Option<ArrayView2<'_, f64>>,
) -> Result<Vec<(f64, TsneOutput)>> {
    if alphas.is_empty() {
        return Err(Error::InvalidSize("alpha sweep needs at least one value".into()));
    }
    let mut out: Vec<(f64, TsneOutput)> = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let hk = Hyperparams { alpha, ..h.clone() };
        let prev: Option<Array2<f64>> = out.last().map(|(_, o)| o.points.clone());
        let start = prev.as_ref().map(|p| p.view()).or(init);
        let res = run_baseline(pd, pprob, &hk, start).map_err(|e| Error::SweepFailed { alpha, source: Box::new(e) })?;
        out.push((alpha, res));
    }
    Ok(out)
}
