//! Statistical core: zero-variance dimensionality reduction, centroid
//! estimation with a regularized inverse covariance, the Mahalanobis
//! metric, and the significance-level cutoff distance.

pub mod linalg;
pub mod math;

use thiserror::Error;

pub use linalg::SymMatrix;

use crate::trace::{Scfd, TrainingSet};

/// Six-digit 1/sqrt(2); the cutoff formula and its forward check
/// `erf(0.707107 * theta) = 1 - p0` use this exact constant.
pub const ERF_ARGUMENT_SCALE: f64 = 0.707107;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance matrix is singular and not recoverable")]
    SingularCovariance,
    #[error("significance level {0} outside (0, 1]")]
    OutOfRange(f64),
    #[error("empty input")]
    EmptyInput,
}

/// Split of coordinates into those that vary over the training set and
/// those that never do. The constant ones are folded into one residual
/// whose sum must not change in a legitimate execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimReduction {
    pub kept: Vec<usize>,
    pub merged: Vec<usize>,
    pub residual_expected: u64,
    /// Original dimensionality D (kept + merged).
    pub input_dim: usize,
}

impl DimReduction {
    pub fn reduced_dim(&self) -> usize {
        self.kept.len()
    }
}

/// Partition coordinates by whether they vary anywhere in the training
/// set. Counts are integers, so "zero variance" is an exact all-equal
/// comparison, not a float tolerance.
pub fn fit_reduction(ts: &TrainingSet) -> DimReduction {
    let d = ts.dim();
    let mut kept = Vec::new();
    let mut merged = Vec::new();
    let mut residual = 0u64;
    for coord in 0..d {
        let first = ts.rows[0].counts[coord];
        if ts.rows.iter().all(|r| r.counts[coord] == first) {
            merged.push(coord);
            residual += first as u64;
        } else {
            kept.push(coord);
        }
    }
    DimReduction {
        kept,
        merged,
        residual_expected: residual,
        input_dim: d,
    }
}

/// Project a frequency vector to the kept coordinates plus the merged
/// residual sum.
pub fn apply_reduction(r: &DimReduction, x: &Scfd) -> Result<(Vec<f64>, u64), StatsError> {
    if x.dim() != r.input_dim {
        return Err(StatsError::DimensionMismatch {
            expected: r.input_dim,
            got: x.dim(),
        });
    }
    let reduced = r.kept.iter().map(|&i| x.counts[i] as f64).collect();
    let residual = r.merged.iter().map(|&i| x.counts[i] as u64).sum();
    Ok((reduced, residual))
}

/// A cluster centroid: mean plus the pre-inverted regularized covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCentroid {
    pub mean: Vec<f64>,
    pub inv_cov: SymMatrix,
    pub member_count: usize,
}

impl ClusterCentroid {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mahalanobis distance to `x`; dimensions must already agree.
    pub fn distance(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.mean.len());
        let d = self.dim();
        let mut q = 0.0f64;
        for i in 0..d {
            let row = self.inv_cov.row(i);
            let di = x[i] - self.mean[i];
            let mut s = 0.0f64;
            for j in 0..d {
                s += row[j] * (x[j] - self.mean[j]);
            }
            q += di * s;
        }
        q.max(0.0).sqrt()
    }

    /// Same computation with an explicit multiply-add tally, for the
    /// cost instrumentation. Counts D^2 madds for the mat-vec plus D for
    /// the final dot product.
    pub fn distance_counted(&self, x: &[f64], madds: &mut u64) -> f64 {
        let d = self.dim();
        *madds += (d * d + d) as u64;
        self.distance(x)
    }

    /// Per-coordinate share of the squared distance:
    /// contribution[i] = (x-mu)_i * (Sigma^-1 (x-mu))_i. Sums to d^2.
    pub fn quadratic_contributions(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let row = self.inv_cov.row(i);
            let mut s = 0.0f64;
            for j in 0..d {
                s += row[j] * (x[j] - self.mean[j]);
            }
            out.push((x[i] - self.mean[i]) * s);
        }
        out
    }
}

/// Mean and regularized inverse covariance of a set of vectors.
///
/// Covariance uses the sample (N-1) normalization; the stored matrix is
/// (Sigma + lambda I)^-1 with lambda = ridge * (trace(Sigma)/D + 1), so a
/// zero-variance coordinate inside a cluster still yields a finite,
/// well-conditioned metric.
pub fn estimate_centroid(rows: &[Vec<f64>], ridge: f64) -> Result<ClusterCentroid, StatsError> {
    if rows.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0f64; d];
    for r in rows {
        if r.len() != d {
            return Err(StatsError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let denom = (n.max(2) - 1) as f64;
    let mut cov = SymMatrix::zeros(d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (r[j] - mean[j]) / denom;
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
    }

    let lambda = ridge * (cov.trace() / d.max(1) as f64 + 1.0);
    cov.add_diagonal(lambda);
    let inv_cov = cov.inverse_spd().ok_or(StatsError::SingularCovariance)?;
    Ok(ClusterCentroid {
        mean,
        inv_cov,
        member_count: n,
    })
}

/// Mahalanobis distance with dimension checking.
pub fn mahalanobis(c: &ClusterCentroid, x: &[f64]) -> Result<f64, StatsError> {
    if x.len() != c.dim() {
        return Err(StatsError::DimensionMismatch {
            expected: c.dim(),
            got: x.len(),
        });
    }
    Ok(c.distance(x))
}

/// Legitimacy threshold derived from a significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub p0: f64,
    pub theta: f64,
}

/// theta = erf_inv(1 - p0) / 0.707107. Larger significance levels give
/// tighter cutoffs; p0 = 1 gives 0.
pub fn compute_cutoff(p0: f64) -> Result<Cutoff, StatsError> {
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(StatsError::OutOfRange(p0));
    }
    let theta = math::erf_inv(1.0 - p0) / ERF_ARGUMENT_SCALE;
    Ok(Cutoff { p0, theta })
}
