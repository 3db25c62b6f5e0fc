//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vte_core::{fit_krr, Dataset, KernelSpec, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn to_faer(rows: &Matrix) -> Mat<f64> {
    Mat::from_fn(rows.nrows(), rows.ncols(), |i, j| rows.get(i, j))
}

pub fn min_eigenvalue(a: &Mat<f64>) -> f64 {
    a.self_adjoint_eigenvalues(Side::Lower)
        .expect("eigenvalues converge")
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// `a x` for a dense matrix.
pub fn apply(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn min_pairwise_distance(rows: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..rows.nrows() {
        for j in 0..i {
            let d: f64 = rows
                .row(i)
                .iter()
                .zip(rows.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Leave-one-out error by refitting on every `n - 1` subset. The closed form
/// keeps the ridge shift `n lambda` of the full fit, so each refit uses
/// `lambda' = n lambda / (n - 1)` under the `(n - 1) lambda'` convention.
pub fn refit_loo(inputs: &Matrix, targets: &[f64], lambda: f64, kernel: &KernelSpec) -> f64 {
    let n = inputs.nrows();
    let shifted = n as f64 * lambda / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sub_t: Vec<f64> = keep.iter().map(|&j| targets[j]).collect();
        let model = fit_krr(&inputs.select_rows(&keep), &sub_t, shifted, kernel).unwrap();
        let r = targets[i] - model.predict(inputs.row(i)).unwrap();
        total += r * r;
    }
    total / n as f64
}

/// Random confounded dataset with both arms guaranteed at least `min_arm` rows.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize, min_arm: usize) -> Dataset {
    let x = normal_matrix(rng, n, d);
    let mut a: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < 0.5 + 0.3 * x.get(i, 0).tanh()).collect();
    for (i, ai) in a.iter_mut().enumerate() {
        if i < min_arm {
            *ai = false;
        } else if i < 2 * min_arm {
            *ai = true;
        }
    }
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let base = x.row(i).iter().sum::<f64>().sin();
            let effect = if a[i] { x.get(i, 0) } else { 0.0 };
            base + effect + 0.5 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::new(x, a, y, None).unwrap()
}
