//! Plain exact t-SNE on a joint distribution `P`, driven by the same kernels,
//! schedules and seeded initialization as the class-constrained optimizer.

use ndarray::{Array2, ArrayView2};

use crate::affinities::PairwiseAffinityMatrix;
use crate::error::{Error, Result};
use crate::lowdim::{momentum_update, pairwise_forces, PairwiseForces};
use crate::model::{check_finite, seeded_gaussian_init, Hyperparams};

/// Final layout and the cost before each update.
#[derive(Debug, Clone)]
pub struct TsneOutput {
    pub points: Array2<f64>,
    pub trace: Vec<f64>,
}

/// Minimizes `KL(P || Q)` over the points. `init` makes the run a warm start
/// (no exaggeration); otherwise the first `n` draws of the seeded generator
/// are used, exactly as for a class-constrained cold start.
pub fn run_vanilla(p: &PairwiseAffinityMatrix, h: &Hyperparams, init: Option<ArrayView2<'_, f64>>) -> Result<TsneOutput> {
    descend(p, h, init, |forces| forces.kl)
}

/// Shared descent loop; `trace_cost` maps each iteration's forces to the
/// reported cost.
pub(crate) fn descend(
    p: &PairwiseAffinityMatrix,
    h: &Hyperparams,
    init: Option<ArrayView2<'_, f64>>,
    mut trace_cost: impl FnMut(&PairwiseForces) -> f64,
) -> Result<TsneOutput> {
    h.validate()?;
    let n = p.n();
    let warm = init.is_some();
    let mut points = match init {
        Some(y) => {
            if y.dim() != (n, 2) {
                return Err(Error::DimensionMismatch { what: "initial point rows", expected: n, actual: y.nrows() });
            }
            check_finite(y)?;
            y.to_owned()
        }
        None => seeded_gaussian_init(n, h.seed)?,
    };
    let mut velocity = Array2::zeros((n, 2));
    let mut trace = Vec::with_capacity(h.iterations);
    for k in 0..h.iterations {
        let exaggeration = if !warm && k < h.early_exaggeration_iters { h.early_exaggeration } else { 1.0 };
        let forces = pairwise_forces(p.values(), points.view(), exaggeration);
        trace.push(trace_cost(&forces));
        momentum_update(&mut points, &mut velocity, forces.grad.view(), h.momentum(k), h.learning_rate);
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate { iteration: k });
        }
    }
    Ok(TsneOutput { points, trace })
}
