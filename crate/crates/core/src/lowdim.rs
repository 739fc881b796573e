//! Student-t affinities in the 2D map, pairwise (`Q^d`) and point-to-landmark
//! (`Q^c`), and the fused force kernels the optimizers call every iteration.
//!
//! The explicit matrices ([`low_dim_pairwise`], [`low_dim_class`]) back the
//! cost evaluation. The kernels ([`pairwise_forces`], [`class_forces`]) never
//! materialize an `n x n` matrix: one pass collects the normalizer, a second
//! accumulates gradients and KL terms row by row. Per-row results are reduced
//! sequentially so results do not depend on the thread count.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

/// Floor applied to every low-dimensional probability.
pub const Q_FLOOR: f64 = 1e-12;

#[inline]
fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Low-dimensional affinities for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimAffinities {
    /// Pairwise `q_ij`, symmetric with zero diagonal.
    pub qd: Array2<f64>,
    /// Instance-to-landmark `q^c_iu`, rows sum to one.
    pub qc: Array2<f64>,
    /// `sum_{k != l} (1 + |y_k - y_l|^2)^-1`.
    pub zd: f64,
    /// Per-row `sum_s (1 + |y_i - v_s|^2)^-1`.
    pub zrows_c: Vec<f64>,
}

impl LowDimAffinities {
    pub fn compute(points: ArrayView2<'_, f64>, landmarks: ArrayView2<'_, f64>) -> Self {
        let (qd, zd) = low_dim_pairwise(points);
        let (qc, zrows_c) = low_dim_class(points, landmarks);
        Self { qd, qc, zd, zrows_c }
    }
}

/// `q_ij = (1 + |y_i - y_j|^2)^-1 / Z`, floored at [`Q_FLOOR`]. Returns the
/// matrix and `Z`. Fewer than two points yield an all-zero matrix.
pub fn low_dim_pairwise(points: ArrayView2<'_, f64>) -> (Array2<f64>, f64) {
    let n = points.nrows();
    let mut q = Array2::zeros((n, n));
    if n < 2 {
        return (q, 0.0);
    }
    q.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        for j in 0..n {
            if j != i {
                row[j] = 1.0 / (1.0 + sq_dist(points.row(i), points.row(j)));
            }
        }
    });
    let row_sums: Vec<f64> = q.rows().into_iter().map(|r| r.sum()).collect();
    let z: f64 = row_sums.iter().sum();
    for ((i, j), v) in q.indexed_iter_mut() {
        if i != j {
            *v = (*v / z).max(Q_FLOOR);
        }
    }
    (q, z)
}

/// `q^c_iu = (1 + |y_i - v_u|^2)^-1 / sum_s (1 + |y_i - v_s|^2)^-1`.
pub fn low_dim_class(points: ArrayView2<'_, f64>, landmarks: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<f64>) {
    let (n, m) = (points.nrows(), landmarks.nrows());
    let mut q = Array2::zeros((n, m));
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for u in 0..m {
            q[[i, u]] = 1.0 / (1.0 + sq_dist(points.row(i), landmarks.row(u)));
        }
        let s = q.row(i).sum();
        sums[i] = s;
        q.row_mut(i).mapv_inplace(|v| (v / s).max(Q_FLOOR));
    }
    (q, sums)
}

/// Gradient of `KL(P || Q^d)` with respect to the points, plus the KL value.
#[derive(Debug, Clone)]
pub(crate) struct PairwiseForces {
    pub grad: Array2<f64>,
    /// `KL(P || Q)` of the unscaled `P`.
    pub kl: f64,
}

/// `4 sum_j (s p_ij - q_ij)(y_i - y_j) Z_ij` where `s` is the exaggeration
/// factor; the reported KL always uses the unscaled `p_ij`.
pub(crate) fn pairwise_forces(p: ArrayView2<'_, f64>, points: ArrayView2<'_, f64>, p_scale: f64) -> PairwiseForces {
    let n = points.nrows();
    let mut grad = Array2::zeros((n, 2));
    if n < 2 {
        return PairwiseForces { grad, kl: 0.0 };
    }
    let ys: Vec<[f64; 2]> = points.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let kernel = |a: &[f64; 2], b: &[f64; 2]| {
        let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
        (dx, dy, 1.0 / (1.0 + dx * dx + dy * dy))
    };
    let row_sums: Vec<f64> = ys
        .par_iter()
        .enumerate()
        .map(|(i, yi)| {
            let mut s = 0.0;
            for (j, yj) in ys.iter().enumerate() {
                if j != i {
                    s += kernel(yi, yj).2;
                }
            }
            s
        })
        .collect();
    let z: f64 = row_sums.iter().sum();
    let inv_z = 1.0 / z;

    let rows: Vec<(f64, f64, f64)> = ys
        .par_iter()
        .enumerate()
        .map(|(i, yi)| {
            let prow = p.row(i);
            let (mut gx, mut gy, mut kl) = (0.0, 0.0, 0.0);
            for ((j, yj), &pij) in ys.iter().enumerate().zip(prow.iter()) {
                if j == i {
                    continue;
                }
                let (dx, dy, k) = kernel(yi, yj);
                let q = (k * inv_z).max(Q_FLOOR);
                let coef = (p_scale * pij - q) * k;
                gx += coef * dx;
                gy += coef * dy;
                // P and Q are symmetric: count each unordered pair once, twice.
                if j > i && pij > 0.0 {
                    kl += 2.0 * pij * (pij / q).ln();
                }
            }
            (4.0 * gx, 4.0 * gy, kl)
        })
        .collect();

    let mut kl = 0.0;
    for (i, (gx, gy, row_kl)) in rows.into_iter().enumerate() {
        grad[[i, 0]] = gx;
        grad[[i, 1]] = gy;
        kl += row_kl;
    }
    PairwiseForces { grad, kl }
}

/// Gradients of `fc2` with respect to points and landmarks, plus its parts.
#[derive(Debug, Clone)]
pub(crate) struct ClassForces {
    pub point_grad: Array2<f64>,
    pub landmark_grad: Array2<f64>,
    /// `(1/n) sum_i KL(P^c_i || Q^c_i)`.
    pub kl: f64,
    /// `(1/n) sum_i (1/m) sum_u p^c_iu |y_i - v_u|^2`, unweighted by lambda.
    pub penalty: f64,
}

pub(crate) fn class_forces(
    pc: ArrayView2<'_, f64>,
    points: ArrayView2<'_, f64>,
    landmarks: ArrayView2<'_, f64>,
    lambda: f64,
) -> ClassForces {
    let (n, m) = (points.nrows(), landmarks.nrows());
    let lam_m = lambda / m as f64;
    let scale = 2.0 / n as f64;

    // Per row: the m pair forces (p - q) Z (y_i - v_u) + (lambda/m) p (y_i - v_u), KL, penalty.
    let rows: Vec<(Vec<[f64; 2]>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = points.row(i);
            let mut kernel = Vec::with_capacity(m);
            let mut diffs = Vec::with_capacity(m);
            let mut total = 0.0;
            for u in 0..m {
                let dx = yi[0] - landmarks[[u, 0]];
                let dy = yi[1] - landmarks[[u, 1]];
                let k = 1.0 / (1.0 + dx * dx + dy * dy);
                total += k;
                kernel.push(k);
                diffs.push([dx, dy]);
            }
            let mut forces = Vec::with_capacity(m);
            let (mut kl, mut pen) = (0.0, 0.0);
            for u in 0..m {
                let p = pc[[i, u]];
                let k = kernel[u];
                let q = (k / total).max(Q_FLOOR);
                let [dx, dy] = diffs[u];
                let coef = (p - q) * k + lam_m * p;
                forces.push([coef * dx, coef * dy]);
                if p > 0.0 {
                    kl += p * (p / q).ln();
                }
                pen += p * (dx * dx + dy * dy);
            }
            (forces, kl, pen / m as f64)
        })
        .collect();

    let mut point_grad = Array2::zeros((n, 2));
    let mut landmark_grad = Array2::zeros((m, 2));
    let (mut kl, mut penalty) = (0.0, 0.0);
    for (i, (forces, row_kl, row_pen)) in rows.into_iter().enumerate() {
        let (mut gx, mut gy) = (0.0, 0.0);
        for (u, [fx, fy]) in forces.into_iter().enumerate() {
            gx += fx;
            gy += fy;
            landmark_grad[[u, 0]] -= fx;
            landmark_grad[[u, 1]] -= fy;
        }
        point_grad[[i, 0]] = scale * gx;
        point_grad[[i, 1]] = scale * gy;
        kl += row_kl;
        penalty += row_pen;
    }
    landmark_grad.mapv_inplace(|v| scale * v);
    ClassForces { point_grad, landmark_grad, kl: kl / n as f64, penalty: penalty / n as f64 }
}

/// Momentum step `x <- x + (mu * v - rate * g)`, shared by every optimizer so
/// that equal gradients give bit-identical trajectories.
pub(crate) fn momentum_update(
    positions: &mut Array2<f64>,
    velocity: &mut Array2<f64>,
    grad: ArrayView2<'_, f64>,
    momentum: f64,
    rate: f64,
) {
    ndarray::Zip::from(positions).and(velocity).and(grad).for_each(|x, v, &g| {
        *v = momentum * *v - rate * g;
        *x += *v;
    });
}
