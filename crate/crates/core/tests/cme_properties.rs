mod common;

use common::{apply, norm, normal_matrix, rel_diff, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use vte_core::{
    default_lambda_grid, embedding_loo_errors, fit_cme, gram_symmetric, kernel_vector,
    select_lambda_v, KernelSpec, Matrix,
};

/// Conditioning rows, embedded rows, and their median-heuristic kernels.
fn instance(lo: usize, hi: usize) -> impl Strategy<Value = (Matrix, Matrix, KernelSpec, KernelSpec)> {
    (lo..=hi, 1usize..3, 1usize..3, any::<u64>()).prop_map(|(n, dv, dx, seed)| {
        let mut r = rng(seed);
        let v = normal_matrix(&mut r, n, dv);
        let noise = normal_matrix(&mut r, n, dx);
        let x = Matrix::from_fn(n, dx, |i, j| v.get(i, 0).sin() + 0.5 * noise.get(i, j));
        let kv = KernelSpec::gaussian_median(&v).unwrap();
        let kx = KernelSpec::gaussian_median(&x).unwrap();
        (v, x, kv, kx)
    })
}

fn query(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, dim)
}

/// Brute-force embedding error: drop each row, refit with the same absolute
/// ridge shift, and evaluate the held-out embedding residual in the X-RKHS.
fn refit_embedding_loo(v: &Matrix, x: &Matrix, kv: &KernelSpec, kx: &KernelSpec, lambda: f64) -> f64 {
    let n = v.nrows();
    let kxx = gram_symmetric(kx, x).unwrap();
    let shifted = n as f64 * lambda / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let model = fit_cme(&v.select_rows(&keep), shifted, kv).unwrap();
        let w = model.weights(v.row(i)).unwrap();
        let mut err = kxx[(i, i)];
        for (a, &ja) in keep.iter().enumerate() {
            err -= 2.0 * w[a] * kxx[(ja, i)];
            for (b, &jb) in keep.iter().enumerate() {
                err += w[a] * w[b] * kxx[(ja, jb)];
            }
        }
        total += err;
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn weights_solve_the_regularized_system(
        (v, _, kv, _) in instance(2, 50),
        log_lambda in -6.0f64..1.0,
        q in query(2),
    ) {
        let lambda = 10f64.powf(log_lambda);
        let model = fit_cme(&v, lambda, &kv).unwrap();
        let q = &q[..v.ncols()];
        let w = model.weights(q).unwrap();
        let k = kernel_vector(&kv, &v, q).unwrap();
        let mut system = gram_symmetric(&kv, &v).unwrap();
        let shift = v.nrows() as f64 * lambda;
        for i in 0..v.nrows() {
            system[(i, i)] += shift;
        }
        let resid: Vec<f64> = apply(&system, &w).iter().zip(&k).map(|(l, r)| l - r).collect();
        prop_assert!(norm(&resid) <= 1e-8 * norm(&k).max(1e-300));

        let rebuilt = model.reconstructed_system();
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..system.nrows() {
            for j in 0..system.ncols() {
                diff = diff.max((rebuilt[(i, j)] - system[(i, j)]).abs());
                scale = scale.max(system[(i, j)].abs());
            }
        }
        prop_assert!(diff <= 1e-8 * scale);
    }

    #[test]
    fn permuting_rows_permutes_weights(
        (v, _, kv, _) in instance(2, 40),
        shuffle in any::<u64>(),
        q in query(2),
        log_lambda in -4.0f64..1.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let mut order: Vec<usize> = (0..v.nrows()).collect();
        order.shuffle(&mut rng(shuffle));
        let q = &q[..v.ncols()];
        let w = fit_cme(&v, lambda, &kv).unwrap().weights(q).unwrap();
        let wp = fit_cme(&v.select_rows(&order), lambda, &kv).unwrap().weights(q).unwrap();
        let scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (pos, &orig) in order.iter().enumerate() {
            prop_assert!((wp[pos] - w[orig]).abs() <= 1e-10 * scale, "{} vs {}", wp[pos], w[orig]);
        }
    }

    #[test]
    fn heavy_ridge_weights_approach_kernel_vector(
        (v, _, kv, _) in instance(2, 50),
        q in query(2),
    ) {
        let lambda = 1e6;
        let q = &q[..v.ncols()];
        let w = fit_cme(&v, lambda, &kv).unwrap().weights(q).unwrap();
        let k = kernel_vector(&kv, &v, q).unwrap();
        let shift = v.nrows() as f64 * lambda;
        let top = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (wi, ki) in w.iter().zip(&k) {
            prop_assert!((shift * wi - ki).abs() <= 1e-3 * top, "{} vs {}", shift * wi, ki);
        }
    }

    #[test]
    fn embedding_loo_matches_refit(
        (v, x, kv, kx) in instance(3, 30),
        log_lambda in -4.0f64..0.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let fast = embedding_loo_errors(&v, &x, &kv, &kx, &[lambda]).unwrap().pop().unwrap().unwrap();
        let oracle = refit_embedding_loo(&v, &x, &kv, &kx, lambda);
        prop_assert!(rel_diff(fast, oracle) <= 1e-8, "{} vs {}", fast, oracle);
    }
}

fn grid_median(grid: &[f64]) -> f64 {
    let m = grid.len() / 2;
    0.5 * (grid[m - 1] + grid[m])
}

#[test]
fn independent_conditioning_prefers_heavy_ridge() {
    let mut r = rng(0);
    let v = normal_matrix(&mut r, 500, 1);
    let x = normal_matrix(&mut r, 500, 2);
    let kv = KernelSpec::gaussian_median(&v).unwrap();
    let kx = KernelSpec::gaussian_median(&x).unwrap();
    let grid = default_lambda_grid();
    let chosen = select_lambda_v(&v, &x, &kv, &kx, &grid).unwrap();
    assert!(chosen >= grid_median(&grid), "chose {chosen}");
}

#[test]
fn perfect_predictor_prefers_light_ridge() {
    let mut r = rng(0);
    let v = normal_matrix(&mut r, 200, 1);
    let kv = KernelSpec::gaussian_median(&v).unwrap();
    let grid = default_lambda_grid();
    let chosen = select_lambda_v(&v, &v, &kv, &kv, &grid).unwrap();
    assert!(chosen <= grid_median(&grid), "chose {chosen}");
}

#[test]
fn errors_are_reported_per_grid_point() {
    let mut r = rng(3);
    let v = normal_matrix(&mut r, 25, 1);
    let x = normal_matrix(&mut r, 25, 1);
    let kv = KernelSpec::gaussian_median(&v).unwrap();
    let kx = KernelSpec::gaussian_median(&x).unwrap();
    let grid = default_lambda_grid();
    let errs = embedding_loo_errors(&v, &x, &kv, &kx, &grid).unwrap();
    assert_eq!(errs.len(), grid.len());
    assert!(errs.iter().all(|e| e.as_ref().is_ok_and(|v| *v >= 0.0)));
}

