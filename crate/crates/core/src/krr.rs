//! Kernel ridge regression with closed-form leave-one-out model selection.
//!
//! The fitted function is `f(x) = k(x)^T alpha` with
//! `alpha = (K + n lambda I)^{-1} y`; note the sample-size scaling of the
//! regularizer. Leave-one-out residuals use the hat-matrix identity
//! `r_i = (y_i - yhat_i) / (1 - H_ii)` with `H = K (K + n lambda I)^{-1}`,
//! which is exact for ridge problems.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, gram_symmetric, kernel_vector, KernelSpec};
use crate::linalg::{mat_t_vec, mat_vec, SpdFactor, SymEigen};
use crate::matrix::Matrix;

/// Leave-one-out fails once some hat-matrix diagonal is this close to 1.
const HAT_DIAGONAL_LIMIT: f64 = 1.0 - 1e-12;

/// Twenty log-spaced values spanning `[1e-6, 10]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-6, 10.0, 20)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrrModel {
    train_inputs: Matrix,
    dual_weights: Vec<f64>,
    lambda: f64,
    kernel: KernelSpec,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::input(format!(
            "regularization must be positive and finite, got {lambda}"
        )))
    }
}

fn check_targets(inputs: &Matrix, targets: &[f64]) -> Result<()> {
    if inputs.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            got: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::input("regression needs at least one observation"));
    }
    if !targets.iter().all(|t| t.is_finite()) {
        return Err(Error::input("regression targets contain non-finite values"));
    }
    Ok(())
}

fn regularized(gram: &Mat<f64>, lambda: f64) -> Mat<f64> {
    let n = gram.nrows();
    let shift = n as f64 * lambda;
    let mut a = gram.clone();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    a
}

/// Fits `alpha = (K + n lambda I)^{-1} targets` by Cholesky.
pub fn fit_krr(
    inputs: &Matrix,
    targets: &[f64],
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<KrrModel> {
    check_targets(inputs, targets)?;
    check_lambda(lambda)?;
    let gram = gram_symmetric(kernel, inputs)?;
    fit_with_gram(inputs, &gram, targets, lambda, kernel)
}

pub(crate) fn fit_with_gram(
    inputs: &Matrix,
    gram: &Mat<f64>,
    targets: &[f64],
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<KrrModel> {
    check_targets(inputs, targets)?;
    check_lambda(lambda)?;
    let factor = SpdFactor::new(&regularized(gram, lambda))?;
    let dual_weights = factor.solve_vec(targets);
    if !dual_weights.iter().all(|a| a.is_finite()) {
        return Err(Error::numeric("ridge solve produced non-finite weights"));
    }
    Ok(KrrModel {
        train_inputs: inputs.clone(),
        dual_weights,
        lambda,
        kernel: kernel.clone(),
    })
}

impl KrrModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let k = kernel_vector(&self.kernel, &self.train_inputs, x)?;
        Ok(crate::matrix::dot(&k, &self.dual_weights))
    }

    pub fn predict_rows(&self, rows: &Matrix) -> Result<Vec<f64>> {
        let cross = gram_matrix(&self.kernel, rows, &self.train_inputs)?;
        Ok(self.predict_with_cross_gram(&cross))
    }

    /// Predictions given a precomputed `k(rows, train_inputs)` matrix.
    pub(crate) fn predict_with_cross_gram(&self, cross: &Mat<f64>) -> Vec<f64> {
        mat_vec(cross, &self.dual_weights)
    }

    pub fn train_inputs(&self) -> &Matrix {
        &self.train_inputs
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
}

fn loo_from_parts(targets: &[f64], fitted: &[f64], hat_diag: &[f64]) -> Result<f64> {
    let n = targets.len();
    let mut total = 0.0;
    for i in 0..n {
        if hat_diag[i] >= HAT_DIAGONAL_LIMIT {
            return Err(Error::numeric(format!(
                "hat-matrix diagonal {} at row {i} too close to 1",
                hat_diag[i]
            )));
        }
        let r = (targets[i] - fitted[i]) / (1.0 - hat_diag[i]);
        total += r * r;
    }
    let err = total / n as f64;
    if err.is_finite() {
        Ok(err)
    } else {
        Err(Error::numeric("leave-one-out error is not finite"))
    }
}

/// Mean squared leave-one-out residual, in closed form.
///
/// Uses one Cholesky factorization: `H = I - n lambda (K + n lambda I)^{-1}`.
pub fn loo_error(
    inputs: &Matrix,
    targets: &[f64],
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<f64> {
    check_targets(inputs, targets)?;
    check_lambda(lambda)?;
    let n = inputs.nrows();
    if n < 2 {
        return Err(Error::input("leave-one-out needs at least 2 observations"));
    }
    let gram = gram_symmetric(kernel, inputs)?;
    let shift = n as f64 * lambda;
    let factor = SpdFactor::new(&regularized(&gram, lambda))?;
    let alpha = factor.solve_vec(targets);
    let fitted: Vec<f64> = targets
        .iter()
        .zip(&alpha)
        .map(|(y, a)| y - shift * a)
        .collect();
    let hat_diag: Vec<f64> = factor
        .inverse_diagonal()
        .iter()
        .map(|d| 1.0 - shift * d)
        .collect();
    loo_from_parts(targets, &fitted, &hat_diag)
}

/// Leave-one-out errors along a regularization path.
///
/// One eigendecomposition of the Gram matrix makes each `(targets, lambda)`
/// evaluation O(n^2), so a whole grid costs about as much as a single fit.
pub struct LooPath {
    eigen: SymEigen,
}

impl LooPath {
    pub fn new(gram: &Mat<f64>) -> Result<Self> {
        if gram.nrows() < 2 {
            return Err(Error::input("leave-one-out needs at least 2 observations"));
        }
        Ok(LooPath {
            eigen: SymEigen::new(gram)?,
        })
    }

    pub fn from_inputs(inputs: &Matrix, kernel: &KernelSpec) -> Result<Self> {
        LooPath::new(&gram_symmetric(kernel, inputs)?)
    }

    fn n(&self) -> usize {
        self.eigen.vectors.nrows()
    }

    fn shrinkage(&self, lambda: f64) -> Vec<f64> {
        let shift = self.n() as f64 * lambda;
        self.eigen
            .values
            .iter()
            .map(|&mu| {
                let mu = mu.max(0.0);
                mu / (mu + shift)
            })
            .collect()
    }

    fn hat_diagonal(&self, shrink: &[f64]) -> Vec<f64> {
        let q = &self.eigen.vectors;
        let mut diag = vec![0.0; self.n()];
        for (k, &s) in shrink.iter().enumerate() {
            let col = q.col(k);
            for (i, d) in diag.iter_mut().enumerate() {
                *d += col[i] * col[i] * s;
            }
        }
        diag
    }

    fn fitted(&self, projected: &[f64], shrink: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = projected.iter().zip(shrink).map(|(p, s)| p * s).collect();
        mat_vec(&self.eigen.vectors, &scaled)
    }

    pub fn error(&self, targets: &[f64], lambda: f64) -> Result<f64> {
        self.errors(targets, &[lambda])?
            .pop()
            .expect("one grid value in, one error out")
    }

    /// Errors for every grid value; individual entries may be numeric errors.
    pub fn errors(&self, targets: &[f64], grid: &[f64]) -> Result<Vec<Result<f64>>> {
        if targets.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: targets.len(),
            });
        }
        if !targets.iter().all(|t| t.is_finite()) {
            return Err(Error::input("regression targets contain non-finite values"));
        }
        for &l in grid {
            check_lambda(l)?;
        }
        let projected = mat_t_vec(&self.eigen.vectors, targets);
        Ok(grid
            .iter()
            .map(|&lambda| {
                let shrink = self.shrinkage(lambda);
                let hat = self.hat_diagonal(&shrink);
                loo_from_parts(targets, &self.fitted(&projected, &shrink), &hat)
            })
            .collect())
    }

    /// Grid value with the smallest error; ties go to the larger value.
    pub fn select(&self, targets: &[f64], grid: &[f64]) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::input("regularization grid is empty"));
        }
        let errors = self.errors(targets, grid)?;
        argmin_prefer_larger(grid, &errors)
    }
}

pub(crate) fn argmin_prefer_larger(grid: &[f64], errors: &[Result<f64>]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for (&lambda, err) in grid.iter().zip(errors) {
        match err {
            Ok(e) => {
                let better = match best {
                    None => true,
                    Some((be, bl)) => *e < be || (*e == be && lambda > bl),
                };
                if better {
                    best = Some((*e, lambda));
                }
            }
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    match (best, last_err) {
        (Some((_, lambda)), _) => Ok(lambda),
        (None, Some(e)) => Err(Error::numeric(format!(
            "every regularization value failed; last error: {e}"
        ))),
        (None, None) => Err(Error::input("regularization grid is empty")),
    }
}

/// Grid value minimizing [`loo_error`]; ties go to the larger value.
pub fn select_lambda(
    inputs: &Matrix,
    targets: &[f64],
    kernel: &KernelSpec,
    grid: &[f64],
) -> Result<f64> {
    check_targets(inputs, targets)?;
    if grid.is_empty() {
        return Err(Error::input("regularization grid is empty"));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    LooPath::from_inputs(inputs, kernel)?.select(targets, grid)
}
