mod common;

use common::{apply, min_pairwise_distance, norm, normal_matrix, normal_vec, refit_loo, rel_diff, rng};
use proptest::prelude::*;
use vte_core::{
    default_lambda_grid, fit_krr, gram_symmetric, loo_error, select_lambda, KernelSpec, LooPath,
    Matrix,
};

fn grid_median(grid: &[f64]) -> f64 {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    let m = g.len() / 2;
    if g.len() % 2 == 0 {
        0.5 * (g[m - 1] + g[m])
    } else {
        g[m]
    }
}

/// Rows, targets and a median-heuristic kernel for `n` in `lo..=hi`.
fn instance(lo: usize, hi: usize) -> impl Strategy<Value = (Matrix, Vec<f64>, KernelSpec)> {
    (lo..=hi, 1usize..4, any::<u64>()).prop_map(|(n, d, seed)| {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, n, d);
        let y = normal_vec(&mut r, n);
        let k = if n > 1 {
            KernelSpec::gaussian_median(&x).unwrap()
        } else {
            KernelSpec::gaussian(1.0).unwrap()
        };
        (x, y, k)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The bandwidth is a fraction of the closest pair's distance, which keeps
    /// the Gram matrix well conditioned so the tiny ridge does not dominate.
    #[test]
    fn interpolates_at_tiny_lambda(
        (x, y, _) in instance(2, 20),
        frac in 0.1f64..0.33,
    ) {
        let gap = min_pairwise_distance(&x);
        prop_assume!(gap > 1e-3);
        let kernel = KernelSpec::gaussian(frac * gap).unwrap();
        let model = fit_krr(&x, &y, 1e-10, &kernel).unwrap();
        for (i, &t) in y.iter().enumerate() {
            let p = model.predict(x.row(i)).unwrap();
            prop_assert!((p - t).abs() <= 1e-4, "row {}: {} vs {}", i, p, t);
        }
    }

    #[test]
    fn dual_norm_shrinks_with_lambda(
        (x, y, k) in instance(2, 40),
        l1 in -4.0f64..1.0,
        gap in 0.01f64..2.0,
    ) {
        let (small, large) = (10f64.powf(l1), 10f64.powf(l1 + gap));
        let a1 = norm(fit_krr(&x, &y, small, &k).unwrap().dual_weights());
        let a2 = norm(fit_krr(&x, &y, large, &k).unwrap().dual_weights());
        prop_assert!(a1 >= a2 * (1.0 - 1e-12), "{} < {}", a1, a2);
    }

    /// Powers of two scale every floating-point step exactly.
    #[test]
    fn predictions_are_exactly_linear_in_targets(
        (x, y, k) in instance(1, 30),
        exp in -20i32..20,
        lambda in 1e-4f64..1.0,
    ) {
        let c = 2f64.powi(exp);
        let base = fit_krr(&x, &y, lambda, &k).unwrap();
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let scaled = fit_krr(&x, &cy, lambda, &k).unwrap();
        for row in x.rows_iter() {
            prop_assert_eq!(scaled.predict(row).unwrap(), c * base.predict(row).unwrap());
        }
    }

    #[test]
    fn predictions_are_linear_in_targets(
        (x, y, k) in instance(1, 30),
        c in -50.0f64..50.0,
        lambda in 1e-4f64..1.0,
    ) {
        let base = fit_krr(&x, &y, lambda, &k).unwrap();
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let scaled = fit_krr(&x, &cy, lambda, &k).unwrap();
        let scale = norm(base.dual_weights()).max(1.0) * c.abs().max(1.0);
        for row in x.rows_iter() {
            let (p, q) = (scaled.predict(row).unwrap(), c * base.predict(row).unwrap());
            prop_assert!((p - q).abs() <= 1e-12 * scale, "{} vs {}", p, q);
        }
    }

    #[test]
    fn dual_weights_solve_the_system(
        (x, y, k) in instance(1, 50),
        lambda in 1e-6f64..10.0,
    ) {
        let model = fit_krr(&x, &y, lambda, &k).unwrap();
        let alpha = model.dual_weights();
        let gram = gram_symmetric(&k, &x).unwrap();
        let shift = x.nrows() as f64 * lambda;
        let lhs = apply(&gram, alpha);
        let resid: Vec<f64> = lhs.iter().zip(alpha).zip(&y).map(|((l, a), t)| l + shift * a - t).collect();
        prop_assert!(norm(&resid) <= 1e-8 * norm(&y).max(f64::MIN_POSITIVE));
    }

    #[test]
    fn closed_form_loo_matches_refit(
        (x, y, k) in instance(2, 50),
        log_lambda in -4.0f64..1.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let oracle = refit_loo(&x, &y, lambda, &k);
        let direct = loo_error(&x, &y, lambda, &k).unwrap();
        let path = LooPath::from_inputs(&x, &k).unwrap().error(&y, lambda).unwrap();
        prop_assert!(rel_diff(direct, oracle) <= 1e-8, "direct {} vs refit {}", direct, oracle);
        prop_assert!(rel_diff(path, oracle) <= 1e-8, "path {} vs refit {}", path, oracle);
    }

    #[test]
    fn path_selection_matches_direct_selection((x, y, k) in instance(2, 40)) {
        let grid = default_lambda_grid();
        let direct = select_lambda(&x, &y, &k, &grid).unwrap();
        let path = LooPath::from_inputs(&x, &k).unwrap().select(&y, &grid).unwrap();
        prop_assert_eq!(direct, path);
    }
}

fn seed0_instance(n: usize) -> (Matrix, Vec<f64>) {
    let mut r = rng(0);
    let x = normal_matrix(&mut r, n, 1);
    let y = normal_vec(&mut r, n);
    (x, y)
}

#[test]
fn heavy_regularization_is_no_better_than_grid_optimum() {
    let (x, y) = seed0_instance(100);
    let smooth: Vec<f64> = x.rows_iter().zip(&y).map(|(r, e)| r[0].sin() + 0.3 * e).collect();
    let k = KernelSpec::gaussian_median(&x).unwrap();
    let grid = default_lambda_grid();
    let best = select_lambda(&x, &smooth, &k, &grid).unwrap();
    let at_best = loo_error(&x, &smooth, best, &k).unwrap();
    let at_huge = loo_error(&x, &smooth, 1e6, &k).unwrap();
    assert!(at_huge >= at_best, "{at_huge} < {at_best}");
}

#[test]
fn pure_noise_prefers_heavy_shrinkage() {
    let (x, y) = seed0_instance(200);
    let k = KernelSpec::gaussian_median(&x).unwrap();
    let grid = default_lambda_grid();
    let chosen = select_lambda(&x, &y, &k, &grid).unwrap();
    assert!(chosen >= grid_median(&grid), "chose {chosen}");
}

#[test]
fn smooth_noiseless_target_prefers_light_shrinkage() {
    let (x, _) = seed0_instance(200);
    let y: Vec<f64> = x.rows_iter().map(|r| (-r[0] * r[0]).exp()).collect();
    let k = KernelSpec::gaussian_median(&x).unwrap();
    let grid = default_lambda_grid();
    let chosen = select_lambda(&x, &y, &k, &grid).unwrap();
    assert!(chosen <= grid_median(&grid), "chose {chosen}");
}

#[test]
fn two_point_prediction_matches_explicit_inverse() {
    let x = Matrix::column(&[0.0, 1.0]);
    let k = KernelSpec::gaussian(1.0).unwrap();
    let model = fit_krr(&x, &[0.0, 1.0], 0.5, &k).unwrap();
    let e = (-0.5f64).exp();
    // inverse of [[2, e], [e, 2]] applied to (0, 1)
    let det = 4.0 - e * e;
    let alpha = [-e / det, 2.0 / det];
    let expected = alpha[0] + e * alpha[1];
    assert!((model.predict(&[0.0]).unwrap() - expected).abs() <= 1e-14);
}
