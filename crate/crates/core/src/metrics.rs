//! Projection quality: trustworthiness, continuity and the class consistency
//! measure (fraction of points closer to a foreign class centroid).
//!
//! Neighbourhoods are exact Euclidean; distance ties are broken by the lower
//! point index everywhere, which makes every measure deterministic.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 7;

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All other points ordered by distance from `i`, ties by index.
fn neighbour_order(points: ArrayView2<'_, f64>, i: usize) -> Vec<usize> {
    let xi = points.row(i);
    let mut order: Vec<(f64, usize)> = (0..points.nrows())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(xi, points.row(j)), j))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, j)| j).collect()
}

/// Indices of the `k` nearest neighbours of every point, self excluded.
pub fn knn_indices(points: ArrayView2<'_, f64>, k: usize) -> Result<Array2<usize>> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order = neighbour_order(points, i);
            order.truncate(k);
            order
        })
        .collect();
    Ok(Array2::from_shape_fn((n, k), |(i, r)| rows[i][r]))
}

/// `ranks[i][j]`: 1-based rank of `j` among the neighbours of `i` (0 on the diagonal).
fn rank_matrix(points: ArrayView2<'_, f64>) -> Vec<Vec<u32>> {
    let n = points.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut ranks = vec![0u32; n];
            for (r, j) in neighbour_order(points, i).into_iter().enumerate() {
                ranks[j] = r as u32 + 1;
            }
            ranks
        })
        .collect()
}

/// Penalizes points that enter the `k`-neighbourhood in the projection
/// without being `k`-neighbours in the original space, weighted by how far
/// down the original ranking they sit.
pub fn trustworthiness(high: ArrayView2<'_, f64>, low: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let n = high.nrows();
    if low.nrows() != n {
        return Err(Error::DimensionMismatch { what: "projection rows", expected: n, actual: low.nrows() });
    }
    if k == 0 || 2 * k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let ranks = rank_matrix(high);
    let neighbours = knn_indices(low, k)?;
    let mut penalty = 0u64;
    for (rank_row, nbrs) in ranks.iter().zip(neighbours.rows()) {
        for &j in nbrs {
            let r = rank_row[j] as u64;
            if r > k as u64 {
                penalty += r - k as u64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty as f64)
}

/// Trustworthiness with the roles of the two spaces swapped.
pub fn continuity(high: ArrayView2<'_, f64>, low: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    trustworthiness(low, high, k)
}

/// Fraction of points strictly closer to some other class's centroid than to
/// their own. Ties count as consistent.
pub fn ccm(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { what: "label count", expected: n, actual: labels.len() });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let dims = points.ncols();
    let mut sums = Array2::<f64>::zeros((classes, dims));
    let mut counts = vec![0usize; classes];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &points.row(i);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    for &c in &present {
        let count = counts[c] as f64;
        sums.row_mut(c).mapv_inplace(|v| v / count);
    }
    let violations = (0..n)
        .filter(|&i| {
            let own = sq_dist(points.row(i), sums.row(labels[i]));
            present.iter().any(|&c| c != labels[i] && sq_dist(points.row(i), sums.row(c)) < own)
        })
        .count();
    Ok(violations as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cctsne,
    Baseline,
    Vanilla,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cctsne => "cctsne",
            Method::Baseline => "baseline",
            Method::Vanilla => "vanilla",
        })
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
    pub k: usize,
    pub trustworthiness: f64,
    pub continuity: f64,
    pub ccm: f64,
}

impl MetricsReport {
    pub fn evaluate(
        method: Method,
        alpha: f64,
        seed: u64,
        high: ArrayView2<'_, f64>,
        low: ArrayView2<'_, f64>,
        labels: &[usize],
        k: usize,
    ) -> Result<Self> {
        Ok(Self {
            method,
            alpha,
            seed,
            k,
            trustworthiness: trustworthiness(high, low, k)?,
            continuity: continuity(high, low, k)?,
            ccm: ccm(low, labels)?,
        })
    }
}

/// Writes the reports as CSV with a header row.
pub fn write_metrics_csv<W: Write>(writer: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn knn_ties_go_to_lower_index() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let nn = knn_indices(x.view(), 1).unwrap();
        assert_eq!(nn[[1, 0]], 0);
        assert_eq!(nn[[2, 0]], 1);
        assert!(matches!(knn_indices(x.view(), 4), Err(Error::InvalidK { k: 4, n: 4 })));
    }

    #[test]
    fn identity_projection_scores_one() {
        let x = Array2::from_shape_fn((30, 2), |(i, k)| ((i * 17 + k * 29) % 23) as f64 * 0.37);
        assert_eq!(trustworthiness(x.view(), x.view(), 7).unwrap(), 1.0);
        assert_eq!(continuity(x.view(), x.view(), 7).unwrap(), 1.0);
    }

    #[test]
    fn k_must_be_below_half_n() {
        let x = Array2::<f64>::zeros((10, 2));
        assert!(trustworthiness(x.view(), x.view(), 5).is_err());
        assert!(trustworthiness(x.view(), x.view(), 4).is_ok());
    }

    #[test]
    fn ccm_examples() {
        let y = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        assert_eq!(ccm(y.view(), &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(ccm(y.view(), &[1, 1, 1, 0, 0, 0]).unwrap(), 0.0);
        assert!(matches!(ccm(y.view(), &[2, 2, 2, 2, 2, 2]), Err(Error::SingleClass)));
    }

    #[test]
    fn ccm_counts_foreign_centroid_violations() {
        // Centroids end up at x=1 (class 0) and x=5 (class 1); point at x=4 is labelled 0.
        let y = array![[0.0, 0.0], [-1.0, 0.0], [4.0, 0.0], [5.0, 0.0], [5.0, 1.0], [5.0, -1.0]];
        let v = ccm(y.view(), &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = MetricsReport {
            method: Method::Baseline,
            alpha: 0.5,
            seed: 3,
            k: 7,
            trustworthiness: 0.9,
            continuity: 0.8,
            ccm: 0.1,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "method,alpha,seed,k,trustworthiness,continuity,ccm\nbaseline,0.5,3,7,0.9,0.8,0.1\n");
    }
}
