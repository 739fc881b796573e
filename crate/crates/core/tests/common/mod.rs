//! Independent reference implementations used as test oracles. Everything
//! here is written with plain loops and shares no code with the library
//! beyond its input types.

#![allow(dead_code)]

use cctsne::affinities::PairwiseAffinityMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FLOOR: f64 = 1e-12;

/// Cost terms `(fc1, fc2_kl, fc2_penalty)`, penalty unweighted by lambda.
pub fn scalar_cost_terms(pd: &Array2<f64>, pc: &Array2<f64>, y: &Array2<f64>, v: &Array2<f64>) -> (f64, f64, f64) {
    let n = y.nrows();
    let m = v.nrows();
    let sq = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let yy = |i: usize| [y[[i, 0]], y[[i, 1]]];
    let vv = |u: usize| [v[[u, 0]], v[[u, 1]]];

    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + sq(yy(i), yy(j)));
            }
        }
    }
    let mut fc1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = pd[[i, j]];
            if i != j && p > 0.0 {
                let q = f64::max(1.0 / (1.0 + sq(yy(i), yy(j))) / z, FLOOR);
                fc1 += p * (p / q).ln();
            }
        }
    }

    let mut kl = 0.0;
    let mut penalty = 0.0;
    for i in 0..n {
        let mut zi = 0.0;
        for u in 0..m {
            zi += 1.0 / (1.0 + sq(yy(i), vv(u)));
        }
        for u in 0..m {
            let p = pc[[i, u]];
            let q = f64::max(1.0 / (1.0 + sq(yy(i), vv(u))) / zi, FLOOR);
            if p > 0.0 {
                kl += p * (p / q).ln();
            }
            penalty += p * sq(yy(i), vv(u)) / m as f64;
        }
    }
    (fc1, kl / n as f64, penalty / n as f64)
}

/// `(C_d, C_c)`.
pub fn scalar_costs(
    pd: &Array2<f64>,
    pc: &Array2<f64>,
    y: &Array2<f64>,
    v: &Array2<f64>,
    alpha: f64,
    lambda: f64,
) -> (f64, f64) {
    let (fc1, kl, pen) = scalar_cost_terms(pd, pc, y, v);
    let fc2 = kl + lambda * pen;
    ((1.0 - alpha) * fc1 + alpha * fc2, fc2)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_differences(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += h;
        let mut minus = x.clone();
        minus[[r, c]] -= h;
        grad[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// `max |a - b| / max(max |b|, 1e-8)`.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// Random symmetric, zero-diagonal matrix with unit total mass.
pub fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> PairwiseAffinityMatrix {
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let w: f64 = rng.random_range(0.01..1.0);
            p[[i, j]] = w;
            p[[j, i]] = w;
        }
    }
    let total = p.sum();
    if total > 0.0 {
        p /= total;
    }
    PairwiseAffinityMatrix::new(p).expect("valid random affinities")
}

/// Random row-stochastic matrix; roughly a quarter of entries are exact zeros.
pub fn random_pc(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut t = Array2::from_shape_fn((n, m), |_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.05..1.0) });
    for mut row in t.rows_mut() {
        if row.sum() == 0.0 {
            row[0] = 1.0;
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    t
}

pub fn random_positions(rows: usize, spread: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, 2), |_| rng.random_range(-spread..spread))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sq_dist_rows(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols()).map(|k| (x[[i, k]] - x[[j, k]]).powi(2)).sum()
}

/// 1-based rank of `j` in the neighbour ordering of `i`: one plus the number
/// of points strictly closer, or equally close with a smaller index.
pub fn rank_by_counting(x: &Array2<f64>, i: usize, j: usize) -> usize {
    let dij = sq_dist_rows(x, i, j);
    1 + (0..x.nrows())
        .filter(|&l| l != i && l != j)
        .filter(|&l| {
            let dil = sq_dist_rows(x, i, l);
            dil < dij || (dil == dij && l < j)
        })
        .count()
}

pub fn trustworthiness_oracle(high: &Array2<f64>, low: &Array2<f64>, k: usize) -> f64 {
    let n = high.nrows();
    let mut sum = 0usize;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let in_low = rank_by_counting(low, i, j) <= k;
            let r = rank_by_counting(high, i, j);
            if in_low && r > k {
                sum += r - k;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * sum as f64
}

pub fn ccm_oracle(y: &Array2<f64>, labels: &[usize]) -> f64 {
    let classes = labels.iter().max().unwrap() + 1;
    let mut centroids = vec![[0.0f64; 2]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &c) in labels.iter().enumerate() {
        centroids[c][0] += y[[i, 0]];
        centroids[c][1] += y[[i, 1]];
        counts[c] += 1;
    }
    for c in 0..classes {
        if counts[c] > 0 {
            centroids[c][0] /= counts[c] as f64;
            centroids[c][1] /= counts[c] as f64;
        }
    }
    let d = |i: usize, c: usize| (y[[i, 0]] - centroids[c][0]).powi(2) + (y[[i, 1]] - centroids[c][1]).powi(2);
    let mut bad = 0;
    for (i, &l) in labels.iter().enumerate() {
        let own = d(i, l);
        if (0..classes).any(|c| c != l && counts[c] > 0 && d(i, c) < own) {
            bad += 1;
        }
    }
    bad as f64 / y.nrows() as f64
}
