//! Conditional mean embedding weights.
//!
//! The embedding of `X | V = v` is represented by ridge weights
//! `w(v) = (K_V + n lambda_V I)^{-1} k_V(v)`; conditional expectations of a
//! function `h` of `X` become `sum_i w_i(v) h(x_i)`. Weights are used raw:
//! they can be negative and need not sum to one.

use std::fmt;

use faer::Mat;

use crate::error::{Error, Result};
use crate::kernel::{gram_symmetric, kernel_vector, KernelSpec};
use crate::krr::argmin_prefer_larger;
use crate::linalg::{pivoted_cholesky, SpdFactor, SymEigen};
use crate::matrix::Matrix;

/// Hat-matrix diagonals at or above this make the embedding LOO undefined.
const HAT_DIAGONAL_LIMIT: f64 = 1.0 - 1e-12;

/// Residual diagonal (relative to the largest kernel diagonal) below which the
/// pivoted Cholesky of `K_V` stops adding columns.
const LOW_RANK_TOLERANCE: f64 = 1e-13;

pub struct CmeModel {
    train_v: Matrix,
    factor: SpdFactor,
    lambda_v: f64,
    kernel_v: KernelSpec,
}

impl fmt::Debug for CmeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CmeModel")
            .field("n", &self.train_v.nrows())
            .field("lambda_v", &self.lambda_v)
            .field("kernel_v", &self.kernel_v)
            .finish()
    }
}

pub fn fit_cme(v_rows: &Matrix, lambda_v: f64, kernel_v: &KernelSpec) -> Result<CmeModel> {
    let n = v_rows.nrows();
    if n == 0 {
        return Err(Error::input("embedding needs at least one observation"));
    }
    if !(lambda_v.is_finite() && lambda_v > 0.0) {
        return Err(Error::input(format!(
            "embedding regularization must be positive and finite, got {lambda_v}"
        )));
    }
    let mut system = gram_symmetric(kernel_v, v_rows)?;
    let shift = n as f64 * lambda_v;
    for i in 0..n {
        system[(i, i)] += shift;
    }
    Ok(CmeModel {
        train_v: v_rows.clone(),
        factor: SpdFactor::new(&system)?,
        lambda_v,
        kernel_v: kernel_v.clone(),
    })
}

impl CmeModel {
    /// `w(v) = (K_V + n lambda_V I)^{-1} k_V(v)`.
    pub fn weights(&self, v: &[f64]) -> Result<Vec<f64>> {
        let k = kernel_vector(&self.kernel_v, &self.train_v, v)?;
        Ok(self.factor.solve_vec(&k))
    }

    pub fn n(&self) -> usize {
        self.train_v.nrows()
    }

    pub fn lambda_v(&self) -> f64 {
        self.lambda_v
    }

    pub fn kernel_v(&self) -> &KernelSpec {
        &self.kernel_v
    }

    pub fn train_v(&self) -> &Matrix {
        &self.train_v
    }

    /// The factorized system `K_V + n lambda_V I`, rebuilt from its factor.
    pub fn reconstructed_system(&self) -> Mat<f64> {
        self.factor.reconstruct()
    }
}

pub fn cme_weights(model: &CmeModel, v: &[f64]) -> Result<Vec<f64>> {
    model.weights(v)
}

/// Orthonormal eigenbasis of the numerically nonzero spectrum of `K_V`.
struct SpectralBasis {
    values: Vec<f64>,
    vectors: Mat<f64>,
}

fn spectral_basis(v_rows: &Matrix, kernel_v: &KernelSpec) -> Result<SpectralBasis> {
    let n = v_rows.nrows();
    let diagonal: Vec<f64> = v_rows
        .rows_iter()
        .map(|r| kernel_v.eval_unchecked(r, r))
        .collect();
    let scale = diagonal.iter().copied().fold(0.0, f64::max);
    let mut col_err = None;
    let l = pivoted_cholesky(
        n,
        &diagonal,
        |j| match kernel_vector(kernel_v, v_rows, v_rows.row(j)) {
            Ok(c) => c,
            Err(e) => {
                col_err = Some(e);
                vec![0.0; n]
            }
        },
        LOW_RANK_TOLERANCE * scale,
    );
    if let Some(e) = col_err {
        return Err(e);
    }
    // K_V ~= L L^T shares its nonzero spectrum with L^T L
    let small = l.transpose() * &l;
    let eig = SymEigen::new(&small)?;
    let top = eig.values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] > LOW_RANK_TOLERANCE * top)
        .collect();
    let values: Vec<f64> = keep.iter().map(|&k| eig.values[k]).collect();
    let lu = &l * &eig.vectors;
    let vectors = Mat::from_fn(n, keep.len(), |i, c| {
        lu[(i, keep[c])] / eig.values[keep[c]].sqrt()
    });
    Ok(SpectralBasis { values, vectors })
}

/// Leave-one-out embedding error for each grid value.
///
/// For held-out weights `w~(i)`, the error at `i` is
/// `K_X[i,i] - 2 w~(i)^T K_X[:,i] + w~(i)^T K_X w~(i)`, which equals
/// `[(I - H) K_X (I - H)]_ii / (1 - H_ii)^2` with `H = K_V (K_V + n lambda I)^{-1}`.
/// The hat matrix is built from a low-rank eigenbasis of `K_V` (pivoted
/// Cholesky, exact up to `1e-13` of the diagonal scale), which keeps each grid
/// point O(n r^2) for numerical rank r.
pub fn embedding_loo_errors(
    v_rows: &Matrix,
    x_rows: &Matrix,
    kernel_v: &KernelSpec,
    kernel_x: &KernelSpec,
    grid: &[f64],
) -> Result<Vec<Result<f64>>> {
    let n = v_rows.nrows();
    if x_rows.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x_rows.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::input("embedding leave-one-out needs at least 2 observations"));
    }
    for &l in grid {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::input(format!(
                "regularization must be positive and finite, got {l}"
            )));
        }
    }
    let basis = spectral_basis(v_rows, kernel_v)?;
    let q = &basis.vectors;
    let r = q.ncols();
    let kx = gram_symmetric(kernel_x, x_rows)?;
    let p = q.transpose() * &kx; // r x n
    let g = &p * q; // r x r

    Ok(grid
        .iter()
        .map(|&lambda| {
            let shift = n as f64 * lambda;
            let s: Vec<f64> = basis.values.iter().map(|&mu| mu / (mu + shift)).collect();
            // M = Q diag(s) G diag(s), n x r
            let sg = Mat::from_fn(r, r, |k, l| s[k] * g[(k, l)] * s[l]);
            let m = q * &sg;
            let mut total = 0.0;
            for i in 0..n {
                let mut hat = 0.0;
                let mut cross = 0.0;
                let mut quad = 0.0;
                for k in 0..r {
                    let qik = q[(i, k)];
                    hat += qik * qik * s[k];
                    cross += qik * s[k] * p[(k, i)];
                    quad += m[(i, k)] * qik;
                }
                if hat >= HAT_DIAGONAL_LIMIT {
                    return Err(Error::numeric(format!(
                        "hat-matrix diagonal {hat} at row {i} too close to 1"
                    )));
                }
                let residual = kx[(i, i)] - 2.0 * cross + quad;
                total += residual / ((1.0 - hat) * (1.0 - hat));
            }
            if total.is_finite() {
                Ok(total)
            } else {
                Err(Error::numeric("embedding leave-one-out error is not finite"))
            }
        })
        .collect())
}

/// Grid value minimizing the embedding leave-one-out error; ties go to the
/// larger value.
pub fn select_lambda_v(
    v_rows: &Matrix,
    x_rows: &Matrix,
    kernel_v: &KernelSpec,
    kernel_x: &KernelSpec,
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::input("regularization grid is empty"));
    }
    if grid.len() == 1 {
        let l = grid[0];
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::input(format!(
                "regularization must be positive and finite, got {l}"
            )));
        }
        return Ok(l);
    }
    let errors = embedding_loo_errors(v_rows, x_rows, kernel_v, kernel_x, grid)?;
    argmin_prefer_larger(grid, &errors)
}
