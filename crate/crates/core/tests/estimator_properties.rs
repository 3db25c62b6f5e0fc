mod common;

use common::{normal_matrix, normal_vec, random_dataset, rng};
use proptest::prelude::*;
use vte_core::{
    cate_variance_baseline, estimate_cvte_subset, estimate_cvte_with_weights, estimate_vte,
    fit_nuisances, gen_synthetic, plug_in, proposed_cvte, proposed_vte, vte_decomposition,
    Dataset, KernelSpec, LambdaPolicy, NuisancePredictions, ProposedOptions,
    SubsetOptions, SynthConfig,
};

fn fitted_instance(seed: u64, n: usize, d: usize) -> (Dataset, vte_core::NuisanceModels) {
    let mut r = rng(seed);
    let data = random_dataset(&mut r, n, d, 2);
    let kernel = KernelSpec::gaussian_median(data.x()).unwrap();
    let models = fit_nuisances(&data, &kernel, &LambdaPolicy::default()).unwrap();
    (data, models)
}

fn predictions() -> impl Strategy<Value = NuisancePredictions> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..30.0, n),
            prop::collection::vec(-5.0f64..30.0, n),
        )
            .prop_map(|(f0, f1, g0, g1)| NuisancePredictions { f0, f1, g0, g1 })
    })
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn decomposition_identity_on_fitted_models(seed in any::<u64>(), n in 8usize..60, d in 1usize..4) {
        let (data, models) = fitted_instance(seed, n, d);
        let report = estimate_vte(&data, &models).unwrap();
        let (cate, exo) = vte_decomposition(&models, &data).unwrap();
        prop_assert_eq!((cate, exo), (report.cate_variance, report.exogenous));
        let scale = cate.abs() + exo.abs();
        prop_assert!((report.estimate - (cate + exo)).abs() <= 1e-10 * scale.max(1e-300));
        prop_assert_eq!(cate_variance_baseline(&data, &models).unwrap(), cate);
    }

    #[test]
    fn decomposition_identity_for_arbitrary_weights(p in predictions(), seed in any::<u64>()) {
        let w = normal_vec(&mut rng(seed), p.len());
        let out = plug_in(&w, &p).unwrap();
        let scale = out.cate_variance.abs() + out.exogenous.abs();
        prop_assert!((out.estimate - (out.cate_variance + out.exogenous)).abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn uniform_weights_reproduce_marginal_estimate(seed in any::<u64>(), n in 8usize..40) {
        let (data, models) = fitted_instance(seed, n, 2);
        let marginal = estimate_vte(&data, &models).unwrap();
        let weighted = estimate_cvte_with_weights(&data, &models, &uniform(n)).unwrap();
        prop_assert_eq!(marginal.estimate.to_bits(), weighted.estimate.to_bits());
        prop_assert_eq!(marginal, weighted);
    }

    /// `f -> f + c`, `g -> g + 2 c f + c^2` leaves the plug-in value unchanged;
    /// the tolerance only absorbs rounding of the `c^2` terms.
    #[test]
    fn analytic_outcome_shift_is_invisible(p in predictions(), c in -20.0f64..20.0) {
        let w = uniform(p.len());
        let base = plug_in(&w, &p).unwrap();
        let shift = |f: &[f64], g: &[f64]| -> (Vec<f64>, Vec<f64>) {
            (
                f.iter().map(|v| v + c).collect(),
                g.iter().zip(f).map(|(g, f)| g + 2.0 * c * f + c * c).collect(),
            )
        };
        let (f0, g0) = shift(&p.f0, &p.g0);
        let (f1, g1) = shift(&p.f1, &p.g1);
        let moved = plug_in(&w, &NuisancePredictions { f0, f1, g0, g1 }).unwrap();
        let tol = 1e-12 * (1.0 + c * c) * 100.0;
        prop_assert!((moved.estimate - base.estimate).abs() <= tol, "{} vs {}", moved.estimate, base.estimate);
        prop_assert!((moved.cate_variance - base.cate_variance).abs() <= tol);
    }

    #[test]
    fn cate_variance_bounded_by_estimate_when_second_moments_dominate(
        p in predictions(),
        extra in prop::collection::vec(0.0f64..3.0, 80),
    ) {
        let n = p.len();
        let g0: Vec<f64> = p.f0.iter().zip(&extra).map(|(f, e)| f * f + e).collect();
        let g1: Vec<f64> = p.f1.iter().zip(&extra[n..]).map(|(f, e)| f * f + e).collect();
        let q = NuisancePredictions { f0: p.f0.clone(), f1: p.f1.clone(), g0, g1 };
        let out = plug_in(&uniform(n), &q).unwrap();
        prop_assert!(out.exogenous >= 0.0);
        prop_assert!(out.cate_variance <= out.estimate + 1e-12 * out.estimate.abs().max(1.0));
    }
}

/// Checked at each arm's own training points, where the small selected ridge
/// makes the fit nearly interpolate.
#[test]
fn constant_outcomes_give_no_exogenous_variance() {
    let mut r = rng(1);
    let x = normal_matrix(&mut r, 60, 2);
    let a: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
    let c = 2.5;
    let data = Dataset::new(x, a, vec![c; 60], None).unwrap();
    let (report, models) = proposed_vte(&data, &ProposedOptions::default()).unwrap();
    let preds = models.predict(data.x()).unwrap();
    for i in data.arm_indices(false) {
        assert!((preds.f0[i] - c).abs() <= 1e-3 * c, "f0 {}", preds.f0[i]);
        assert!((preds.g0[i] - c * c).abs() <= 1e-3 * c * c, "g0 {}", preds.g0[i]);
    }
    for i in data.arm_indices(true) {
        assert!((preds.f1[i] - c).abs() <= 1e-3 * c, "f1 {}", preds.f1[i]);
        assert!((preds.g1[i] - c * c).abs() <= 1e-3 * c * c, "g1 {}", preds.g1[i]);
    }
    // off-arm extrapolation shrinks slightly toward zero, so compare on the
    // scale of the second moment c^2
    assert!(report.exogenous.abs() <= 1e-2 * c * c, "exogenous {}", report.exogenous);
    assert!(report.estimate.abs() <= 1e-2 * c * c, "estimate {}", report.estimate);
}

#[test]
fn seed0_selected_lambdas_lie_in_grid_range() {
    let (data, _) = gen_synthetic(&SynthConfig::new(500, 0)).unwrap();
    let (report, _) = proposed_vte(&data, &ProposedOptions::default()).unwrap();
    let l = report.lambdas;
    for v in [l.f0, l.f1, l.g0, l.g1] {
        assert!((1e-6..=10.0).contains(&v), "lambda {v}");
    }
    let (n0, n1) = data.arm_sizes();
    assert_eq!((report.n, report.n0, report.n1), (500, n0, n1));
}

#[test]
fn fitted_models_respect_arm_split() {
    let (data, models) = fitted_instance(3, 40, 2);
    assert_eq!(models.arm_indices(false), data.arm_indices(false).as_slice());
    assert_eq!(models.arm_indices(true), data.arm_indices(true).as_slice());
    assert_eq!(models.f0.train_inputs(), &data.x().select_rows(&data.arm_indices(false)));
    assert_eq!(models.g1.train_inputs(), &data.x().select_rows(&data.arm_indices(true)));
}

#[test]
fn marginal_estimate_and_decomposition_at_n5000() {
    let (data, _) = gen_synthetic(&SynthConfig::new(5000, 0)).unwrap();
    let (report, models) = proposed_vte(&data, &ProposedOptions::default()).unwrap();
    assert!((report.estimate - 3.0).abs() <= 0.5, "estimate {}", report.estimate);
    assert!((report.cate_variance - 1.0).abs() <= 0.3, "cate {}", report.cate_variance);
    assert!((report.exogenous - 2.0).abs() <= 0.3, "exogenous {}", report.exogenous);
    assert_eq!(cate_variance_baseline(&data, &models).unwrap(), report.cate_variance);
}

#[test]
fn irrelevant_conditioning_variable_recovers_marginal_at_n5000() {
    let (base, _) = gen_synthetic(&SynthConfig::new(5000, 1)).unwrap();
    let v = normal_matrix(&mut rng(77), 5000, 1);
    let data = Dataset::new(base.x().clone(), base.treatment().to_vec(), base.y().to_vec(), Some(v)).unwrap();
    let report = proposed_cvte(&data, &[0.3], &ProposedOptions::default()).unwrap();
    assert!((report.estimate - 3.0).abs() <= 0.5, "estimate {}", report.estimate);
    assert!(report.lambda_v.is_some());
}

#[test]
fn subset_conditional_estimate_at_n5000() {
    let (data, _) = gen_synthetic(&SynthConfig::new(5000, 0)).unwrap();
    let report = estimate_cvte_subset(&data, &[1], &[0.0], &SubsetOptions::default()).unwrap();
    assert!((report.estimate - 2.75).abs() <= 0.5, "estimate {}", report.estimate);
    assert_eq!(report.bandwidths.len(), 2);
}

#[test]
fn subset_rejects_full_or_empty_column_sets() {
    let (data, _) = gen_synthetic(&SynthConfig {
        n: 30,
        d: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let opts = SubsetOptions::default();
    assert!(estimate_cvte_subset(&data, &[], &[], &opts).unwrap_err().is_input());
    assert!(estimate_cvte_subset(&data, &[0, 1], &[0.0, 0.0], &opts).unwrap_err().is_input());
}
