//! High-dimensional affinities: the perplexity-calibrated pairwise
//! distribution `P^d` and the instance-to-class distribution `P^c`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ClassProbabilityMatrix, FeatureMatrix};

/// Conditional probabilities below this value are raised to it before
/// row normalization.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Allowed gap between a row's entropy and `ln(perplexity)`, in nats.
/// Comfortably inside the `1e-5` bits contract.
const ENTROPY_TOLERANCE: f64 = 1e-6;
const MAX_BRACKET_STEPS: usize = 64;
const MAX_BISECTION_STEPS: usize = 50;

/// Symmetric joint distribution over pairs, zero diagonal, total mass one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseAffinityMatrix {
    values: Array2<f64>,
}

impl PairwiseAffinityMatrix {
    /// Wraps a matrix after checking the joint-distribution invariants.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch { what: "affinity columns", expected: n, actual: values.ncols() });
        }
        crate::model::check_finite(values.view())?;
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::InvalidSize(format!("affinity diagonal entry {i} is non-zero")));
            }
            for j in 0..i {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if a < 0.0 || (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidSize(format!("affinity entry ({i}, {j}) breaks symmetry")));
                }
            }
        }
        // A single instance has no pairs and therefore no mass.
        let total = values.sum();
        if n >= 2 && (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSize(format!("affinities sum to {total}, not 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Convex mix `(1 - w) * self + w * other`; `w = 0` and `w = 1` return the
    /// operands bit-for-bit.
    pub fn mix(&self, other: &Self, w: f64) -> Self {
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, &b| *a = (1.0 - w) * *a + w * b);
        Self { values }
    }
}

/// Per-point Gaussian bandwidths `sigma_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthVector {
    pub sigma: Vec<f64>,
}

/// `D[i][j] = |x_i - x_j|^2`.
pub fn pairwise_squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, n));
    out.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        let xi = x.row(i);
        for j in 0..n {
            if j != i {
                row[j] = xi.iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
    });
    out
}

/// Shannon entropy (nats) and normalized row for precision `beta`.
/// Distances are shifted by the row minimum so the exponentials never all
/// underflow; the shift cancels in the normalization.
fn row_distribution(dist: &[f64], skip: usize, shift: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == skip {
            *o = 0.0;
            continue;
        }
        let w = (-beta * (d - shift)).exp();
        *o = w;
        sum += w;
        weighted += w * (d - shift);
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

fn calibrate_row(row: usize, dist: &[f64], target: f64) -> Result<(Vec<f64>, f64)> {
    let shift = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != row)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut probs = vec![0.0; dist.len()];
    let mut beta = 1.0;
    let mut entropy = row_distribution(dist, row, shift, beta, &mut probs);

    if (entropy - target).abs() > ENTROPY_TOLERANCE {
        // Entropy falls as beta grows; expand geometrically until the target is bracketed.
        let too_flat = entropy > target;
        let (mut lo, mut hi) = (beta, beta);
        let mut bracketed = false;
        for _ in 0..MAX_BRACKET_STEPS {
            beta = if too_flat { beta * 2.0 } else { beta * 0.5 };
            entropy = row_distribution(dist, row, shift, beta, &mut probs);
            if (entropy - target).abs() <= ENTROPY_TOLERANCE {
                return finish_row(row, probs, beta);
            }
            if too_flat {
                lo = hi;
                hi = beta;
            } else {
                hi = lo;
                lo = beta;
            }
            if (entropy > target) != too_flat {
                bracketed = true;
                break;
            }
        }
        if !bracketed {
            return Err(Error::CalibrationFailed {
                row,
                reason: format!("could not bracket target perplexity {:.4}", target.exp()),
            });
        }
        let mut converged = false;
        for _ in 0..MAX_BISECTION_STEPS {
            beta = 0.5 * (lo + hi);
            entropy = row_distribution(dist, row, shift, beta, &mut probs);
            if (entropy - target).abs() <= ENTROPY_TOLERANCE {
                converged = true;
                break;
            }
            if entropy > target {
                lo = beta;
            } else {
                hi = beta;
            }
        }
        if !converged {
            return Err(Error::CalibrationFailed {
                row,
                reason: format!("bisection stopped {:.3e} nats from target", (entropy - target).abs()),
            });
        }
    }
    finish_row(row, probs, beta)
}

fn finish_row(row: usize, mut probs: Vec<f64>, beta: f64) -> Result<(Vec<f64>, f64)> {
    let mut sum = 0.0;
    for (j, p) in probs.iter_mut().enumerate() {
        if j != row {
            *p = p.max(PROBABILITY_FLOOR);
            sum += *p;
        }
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    Ok((probs, beta))
}

/// Conditional distributions `p_{j|i}` whose perplexity matches the target,
/// each bandwidth found by bracketed bisection on the precision.
pub fn calibrate_conditional(
    sq_distances: ArrayView2<'_, f64>,
    perplexity: f64,
) -> Result<(Array2<f64>, BandwidthVector)> {
    let n = sq_distances.nrows();
    if !(perplexity >= 2.0 && perplexity < n as f64) {
        return Err(Error::InvalidHyperparameter {
            name: "perplexity",
            reason: format!("{perplexity} must lie in [2, {n})"),
        });
    }
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dist = sq_distances.row(i).to_vec();
            calibrate_row(i, &dist, target)
        })
        .collect::<Result<_>>()?;

    let mut conditional = Array2::zeros((n, n));
    let mut sigma = Vec::with_capacity(n);
    for (i, (probs, beta)) in rows.into_iter().enumerate() {
        conditional.row_mut(i).assign(&ndarray::ArrayView1::from(&probs[..]));
        sigma.push((1.0 / (2.0 * beta)).sqrt());
    }
    Ok((conditional, BandwidthVector { sigma }))
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn symmetrize(conditional: ArrayView2<'_, f64>) -> PairwiseAffinityMatrix {
    let n = conditional.nrows();
    let scale = 1.0 / (2.0 * n as f64);
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[[i, j]] = (conditional[[i, j]] + conditional[[j, i]]) * scale;
            }
        }
    }
    PairwiseAffinityMatrix { values }
}

/// Full pipeline from features to `P^d`.
pub fn data_affinities(x: &FeatureMatrix, perplexity: f64) -> Result<PairwiseAffinityMatrix> {
    let d2 = pairwise_squared_distances(x.values());
    let (conditional, _) = calibrate_conditional(d2.view(), perplexity)?;
    Ok(symmetrize(conditional.view()))
}

/// `p^c_iu = t_iu`: each class landmark sits at a unit vector of probability
/// space, so the instance-to-class affinities are the probabilities themselves.
pub fn class_affinities(t: &ClassProbabilityMatrix) -> Array2<f64> {
    let pc = t.values().to_owned();
    debug_assert!(pc.rows().into_iter().all(|r| (r.sum() - 1.0).abs() <= 1e-9));
    pc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    fn row_entropy_bits(row: ndarray::ArrayView1<'_, f64>) -> f64 {
        -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
    }

    #[test]
    fn distances_of_345_triangle() {
        let d = pairwise_squared_distances(array![[0.0, 0.0], [3.0, 4.0]].view());
        assert_eq!(d, array![[0.0, 25.0], [25.0, 0.0]]);
        let same = pairwise_squared_distances(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]].view());
        assert!(same.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distances_match_double_loop() {
        let x = random_matrix(5, 3, 1);
        let d = pairwise_squared_distances(x.view());
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += (x[[i, k]] - x[[j, k]]) * (x[[i, k]] - x[[j, k]]);
                }
                assert_eq!(d[[i, j]], acc);
            }
        }
    }

    #[test]
    fn equidistant_points_give_uniform_rows() {
        let d = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let (p, _) = calibrate_conditional(d.view(), 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert!((p[[i, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_meets_stopping_contract() {
        let x = random_matrix(40, 4, 9);
        let d = pairwise_squared_distances(x.view());
        for perplexity in [2.0, 5.0, 12.5, 30.0] {
            let (p, bw) = calibrate_conditional(d.view(), perplexity).unwrap();
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!((row_entropy_bits(row) - perplexity.log2()).abs() <= 1e-5);
            }
            assert!(bw.sigma.iter().all(|s| *s > 0.0 && s.is_finite()));
        }
    }

    /// Independent oracle: multi-level grid search over the precision.
    fn grid_search_row(dist: &[f64], row: usize, perplexity: f64) -> Vec<f64> {
        let target = perplexity.log2();
        let eval = |beta: f64| {
            let w: Vec<f64> = dist
                .iter()
                .enumerate()
                .map(|(j, &d)| if j == row { 0.0 } else { (-beta * d).exp() })
                .collect();
            let s: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let h = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>();
            (h, p)
        };
        let (mut lo, mut hi) = (-12.0f64, 12.0f64);
        let mut best = 0.0;
        for _ in 0..8 {
            let steps = 2000;
            let mut best_gap = f64::INFINITY;
            for s in 0..=steps {
                let lb = lo + (hi - lo) * s as f64 / steps as f64;
                let gap = (eval(lb.exp()).0 - target).abs();
                if gap < best_gap {
                    best_gap = gap;
                    best = lb;
                }
            }
            let width = (hi - lo) / steps as f64;
            lo = best - 2.0 * width;
            hi = best + 2.0 * width;
        }
        eval(best.exp()).1
    }

    #[test]
    fn calibration_matches_grid_search_oracle() {
        let x = random_matrix(10, 3, 21);
        let d = pairwise_squared_distances(x.view());
        let (p, _) = calibrate_conditional(d.view(), 5.0).unwrap();
        for i in 0..10 {
            let oracle = grid_search_row(&d.row(i).to_vec(), i, 5.0);
            for j in 0..10 {
                assert!((p[[i, j]] - oracle[j]).abs() <= 1e-4, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn degenerate_distances_fail_to_bracket() {
        let d = Array2::<f64>::zeros((6, 6));
        assert!(matches!(calibrate_conditional(d.view(), 3.0), Err(Error::CalibrationFailed { row: 0, .. })));
    }

    #[test]
    fn perplexity_range_is_enforced() {
        let d = Array2::<f64>::zeros((4, 4));
        assert!(calibrate_conditional(d.view(), 4.0).is_err());
        assert!(calibrate_conditional(d.view(), 1.5).is_err());
    }

    #[test]
    fn symmetrize_two_points() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let p = symmetrize(c.view());
        assert_eq!(p.values(), array![[0.0, 0.5], [0.5, 0.0]].view());
    }

    #[test]
    fn symmetrize_random_conditional() {
        let mut c = random_matrix(6, 6, 4).mapv(f64::abs);
        for i in 0..6 {
            c[[i, i]] = 0.0;
            let s = c.row(i).sum();
            c.row_mut(i).mapv_inplace(|v| v / s);
        }
        let p = symmetrize(c.view());
        assert!((p.values().sum() - 1.0).abs() <= 1e-9);
        let t = p.values().t().to_owned();
        assert!(p.values().iter().zip(t.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
        PairwiseAffinityMatrix::new(p.values().to_owned()).unwrap();
    }

    #[test]
    fn pd_bounds_and_scale_invariance() {
        let x = random_matrix(30, 5, 77);
        let fx = FeatureMatrix::new(x.clone()).unwrap();
        let p = data_affinities(&fx, 8.0).unwrap();
        let bound = 1.0 / 30.0;
        assert!(p.values().iter().all(|&v| (0.0..=bound).contains(&v)));

        let scaled = x.mapv(|v| v * 37.5);
        let d = pairwise_squared_distances(scaled.view());
        let (cond, _) = calibrate_conditional(d.view(), 8.0).unwrap();
        for row in cond.rows() {
            assert!((row_entropy_bits(row) - 8f64.log2()).abs() <= 1e-5);
        }
    }

    #[test]
    fn pd_is_permutation_equivariant() {
        let x = random_matrix(12, 3, 5);
        let perm: Vec<usize> = vec![3, 0, 11, 7, 1, 2, 10, 4, 9, 6, 5, 8];
        let xp = Array2::from_shape_fn((12, 3), |(i, k)| x[[perm[i], k]]);
        let p = data_affinities(&FeatureMatrix::new(x).unwrap(), 4.0).unwrap();
        let pp = data_affinities(&FeatureMatrix::new(xp).unwrap(), 4.0).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert!((pp.values()[[i, j]] - p.values()[[perm[i], perm[j]]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_affinities_are_identity() {
        let t = ClassProbabilityMatrix::new(array![[0.2, 0.8], [1.0, 0.0], [0.5, 0.5]], None).unwrap();
        assert_eq!(class_affinities(&t), array![[0.2, 0.8], [1.0, 0.0], [0.5, 0.5]]);
    }
}
