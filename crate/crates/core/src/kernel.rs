//! Gaussian and product kernels, Gram matrices and the median-distance
//! bandwidth heuristic.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// A positive-definite kernel on real vectors.
///
/// `Gaussian` is `exp(-|x - x'|^2 / (2 bandwidth^2))` over every coordinate it
/// is given. `Product` multiplies part kernels, each seeing only its own
/// columns; the parts partition `0..dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Product { dim: usize, parts: Vec<KernelPart> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPart {
    pub columns: Vec<usize>,
    pub kernel: KernelSpec,
}

#[inline]
fn gaussian(sq_dist: f64, bandwidth: f64) -> f64 {
    (-sq_dist / (2.0 * bandwidth * bandwidth)).exp()
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::input(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    /// Gaussian kernel with its bandwidth set by [`median_heuristic`].
    pub fn gaussian_median(rows: &Matrix) -> Result<Self> {
        KernelSpec::gaussian(median_heuristic(rows)?)
    }

    pub fn product(dim: usize, parts: Vec<KernelPart>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::input("product kernel needs at least one part"));
        }
        let mut seen = vec![false; dim];
        for part in &parts {
            if part.columns.is_empty() {
                return Err(Error::input("product kernel part has no columns"));
            }
            if let Some(pd) = part.kernel.dim() {
                if pd != part.columns.len() {
                    return Err(Error::DimensionMismatch {
                        expected: pd,
                        got: part.columns.len(),
                    });
                }
            }
            part.kernel.validate()?;
            for &c in &part.columns {
                if c >= dim {
                    return Err(Error::input(format!(
                        "product kernel column {c} out of range for dimension {dim}"
                    )));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::input(format!(
                        "product kernel parts overlap on column {c}"
                    )));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::input(format!(
                "product kernel parts do not cover column {c}"
            )));
        }
        Ok(KernelSpec::Product { dim, parts })
    }

    /// Input dimension the kernel is tied to, if any. A bare Gaussian accepts
    /// any dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Gaussian { .. } => None,
            KernelSpec::Product { dim, .. } => Some(*dim),
        }
    }

    /// Bandwidths of every Gaussian component, depth first.
    pub fn bandwidths(&self) -> Vec<f64> {
        match self {
            KernelSpec::Gaussian { bandwidth } => vec![*bandwidth],
            KernelSpec::Product { parts, .. } => {
                parts.iter().flat_map(|p| p.kernel.bandwidths()).collect()
            }
        }
    }

    /// Re-checks invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { bandwidth } => KernelSpec::gaussian(*bandwidth).map(|_| ()),
            KernelSpec::Product { dim, parts } => {
                KernelSpec::product(*dim, parts.clone()).map(|_| ())
            }
        }
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        match self.dim() {
            Some(expected) if expected != got => Err(Error::DimensionMismatch { expected, got }),
            _ => Ok(()),
        }
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { bandwidth } => gaussian(squared_distance(x, y), *bandwidth),
            KernelSpec::Product { parts, .. } => {
                let mut acc = 1.0;
                for part in parts {
                    let xs: Vec<f64> = part.columns.iter().map(|&c| x[c]).collect();
                    let ys: Vec<f64> = part.columns.iter().map(|&c| y[c]).collect();
                    acc *= part.kernel.eval_unchecked(&xs, &ys);
                }
                acc
            }
        }
    }
}

/// Evaluates `spec` at a pair of points.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    spec.check_dim(x.len())?;
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::input("kernel input contains non-finite values"));
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Cross Gram matrix, entry `(i, j) = k(rows_a[i], rows_b[j])`.
pub fn gram_matrix(spec: &KernelSpec, rows_a: &Matrix, rows_b: &Matrix) -> Result<Mat<f64>> {
    if rows_a.ncols() != rows_b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: rows_a.ncols(),
            got: rows_b.ncols(),
        });
    }
    spec.check_dim(rows_a.ncols())?;
    Ok(cross_gram(spec, rows_a, rows_b))
}

/// Gram matrix of a row set against itself. Exactly symmetric with unit
/// diagonal, and computes only the upper triangle.
pub fn gram_symmetric(spec: &KernelSpec, rows: &Matrix) -> Result<Mat<f64>> {
    spec.check_dim(rows.ncols())?;
    Ok(self_gram(spec, rows))
}

fn cross_gram(spec: &KernelSpec, a: &Matrix, b: &Matrix) -> Mat<f64> {
    match spec {
        KernelSpec::Gaussian { bandwidth } => {
            let mut out = Mat::zeros(a.nrows(), b.nrows());
            for j in 0..b.nrows() {
                let bj = b.row(j);
                for i in 0..a.nrows() {
                    out[(i, j)] = gaussian(squared_distance(a.row(i), bj), *bandwidth);
                }
            }
            out
        }
        KernelSpec::Product { parts, .. } => {
            let mut out = Mat::from_fn(a.nrows(), b.nrows(), |_, _| 1.0);
            for part in parts {
                let g = cross_gram(
                    &part.kernel,
                    &a.select_cols(&part.columns),
                    &b.select_cols(&part.columns),
                );
                hadamard_in_place(&mut out, &g);
            }
            out
        }
    }
}

fn hadamard_in_place(out: &mut Mat<f64>, other: &Mat<f64>) {
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] *= other[(i, j)];
        }
    }
}

fn self_gram(spec: &KernelSpec, rows: &Matrix) -> Mat<f64> {
    let n = rows.nrows();
    match spec {
        KernelSpec::Gaussian { bandwidth } => {
            let mut out = Mat::zeros(n, n);
            for j in 0..n {
                let rj = rows.row(j);
                for i in 0..j {
                    let v = gaussian(squared_distance(rows.row(i), rj), *bandwidth);
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
                out[(j, j)] = 1.0;
            }
            out
        }
        KernelSpec::Product { parts, .. } => {
            let mut out = Mat::from_fn(n, n, |_, _| 1.0);
            for part in parts {
                let g = self_gram(&part.kernel, &rows.select_cols(&part.columns));
                hadamard_in_place(&mut out, &g);
            }
            out
        }
    }
}

/// Kernel vector `[k(rows[0], x), ..., k(rows[n-1], x)]`.
pub fn kernel_vector(spec: &KernelSpec, rows: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if rows.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.ncols(),
            got: x.len(),
        });
    }
    spec.check_dim(x.len())?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::input("kernel input contains non-finite values"));
    }
    Ok(rows.rows_iter().map(|r| spec.eval_unchecked(r, x)).collect())
}

/// Median of the Euclidean distances over all unordered row pairs.
///
/// A zero median falls back to the smallest positive distance, and an
/// all-identical row set yields 1.0.
pub fn median_heuristic(rows: &Matrix) -> Result<f64> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::input(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ri = rows.row(i);
        for j in (i + 1)..n {
            dists.push(squared_distance(ri, rows.row(j)).sqrt());
        }
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::input("median heuristic input contains non-finite values"));
    }
    let median = median_in_place(&mut dists);
    if median > 0.0 {
        return Ok(median);
    }
    let smallest_positive = dists
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    Ok(if smallest_positive.is_finite() {
        smallest_positive
    } else {
        1.0
    })
}

/// Median with the midpoint convention for even counts. Reorders `values`.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    debug_assert!(m > 0);
    let (lower, upper_mid, _) = values.select_nth_unstable_by(m / 2, f64::total_cmp);
    let upper = *upper_mid;
    if m % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}
