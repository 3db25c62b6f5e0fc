//! Thin wrappers over `faer` for the dense symmetric systems the estimators
//! solve, plus a pivoted Cholesky for numerically low-rank Gram matrices.

use faer::linalg::solvers::{DenseSolveCore, Llt, SolveCore};
use faer::{Conj, Mat, Side};

use crate::error::{Error, Result};

/// Cholesky factorization of a symmetric positive-definite matrix.
pub(crate) struct SpdFactor {
    llt: Llt<f64>,
}

impl SpdFactor {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if !all_finite(a) {
            return Err(Error::numeric("matrix to factorize has non-finite entries"));
        }
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::numeric(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(SpdFactor { llt })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }

    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let inv = self.llt.inverse();
        (0..inv.nrows()).map(|i| inv[(i, i)]).collect()
    }

    pub fn reconstruct(&self) -> Mat<f64> {
        self.llt.reconstruct()
    }
}

/// Eigendecomposition `A = Q diag(values) Q^T` of a symmetric matrix, values
/// ascending.
pub(crate) struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl SymEigen {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if !all_finite(a) {
            return Err(Error::numeric("matrix to diagonalize has non-finite entries"));
        }
        let evd = a
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::numeric(format!("eigendecomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let values = (0..s.nrows()).map(|i| s[i]).collect();
        Ok(SymEigen {
            values,
            vectors: evd.U().to_owned(),
        })
    }
}

/// Greedy pivoted Cholesky: returns `L` (n x r) with `A ~= L L^T`, stopping
/// once every remaining diagonal residual is at most `tol`.
///
/// Only the diagonal and the pivot columns of `A` are ever requested.
pub(crate) fn pivoted_cholesky(
    n: usize,
    diagonal: &[f64],
    mut column: impl FnMut(usize) -> Vec<f64>,
    tol: f64,
) -> Mat<f64> {
    let mut residual = diagonal.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; n];
    while cols.len() < n {
        let (pivot, &d) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("unused pivot exists while rank < n");
        if d <= tol {
            break;
        }
        used[pivot] = true;
        let mut c = column(pivot);
        for prev in &cols {
            let scale = prev[pivot];
            for (ci, pi) in c.iter_mut().zip(prev) {
                *ci -= scale * pi;
            }
        }
        let root = d.sqrt();
        for ci in c.iter_mut() {
            *ci /= root;
        }
        // pin the pivot and already-factored entries to their exact values
        c[pivot] = root;
        for (i, ci) in c.iter_mut().enumerate() {
            if used[i] && i != pivot {
                *ci = 0.0;
            }
        }
        for (r, ci) in residual.iter_mut().zip(&c) {
            *r -= ci * ci;
        }
        residual[pivot] = 0.0;
        cols.push(c);
    }
    Mat::from_fn(n, cols.len(), |i, k| cols[k][i])
}

pub(crate) fn all_finite(a: &Mat<f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}

pub(crate) fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * xj;
        }
    }
    out
}

/// `A^T x`.
pub(crate) fn mat_t_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| {
            let col = a.col(j);
            (0..a.nrows()).map(|i| col[i] * x[i]).sum()
        })
        .collect()
}
