//! Estimators of the variance of the treatment effect, `Var(Y1 - Y0)`, from
//! confounded observational data.
//!
//! Nuisance regressions are kernel ridge regressions with leave-one-out
//! regularization; conditional estimates weight units with conditional mean
//! embedding weights. Comparison baselines, a synthetic generator with exact
//! oracles, and a benchmark harness are included.

pub mod baselines;
pub mod cme;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernel;
pub mod krr;
pub(crate) mod linalg;
pub mod matrix;
pub mod simdata;

pub use baselines::{
    cate_variance_baseline, cate_variance_on, fit_propensity, match_vte, naive_vte, MatchConfig,
    MatchMetric, PropensityModel,
};
pub use cme::{cme_weights, embedding_loo_errors, fit_cme, select_lambda_v, CmeModel};
pub use dataset::{population_variance, Dataset};
pub use error::{Error, Result};
pub use estimators::{
    estimate_cvte, estimate_cvte_subset, estimate_cvte_subset_with, estimate_cvte_with_weights,
    estimate_vte, fit_nuisances, plug_in, proposed_cvte, proposed_vte, vte_decomposition,
    EmbeddingLambda, EstimateReport, LambdaPolicy, NuisanceLambdas, NuisanceModels,
    NuisancePredictions, PlugIn, ProposedOptions, SubsetOptions,
};
pub use kernel::{
    eval_kernel, gram_matrix, gram_symmetric, kernel_vector, median_heuristic, KernelPart,
    KernelSpec,
};
pub use krr::{default_lambda_grid, fit_krr, log_grid, loo_error, select_lambda, KrrModel, LooPath};
pub use matrix::Matrix;
pub use simdata::{
    gen_nonidentifiable_pair, gen_synthetic, true_cvte, true_cvte_monte_carlo, true_vte,
    true_vte_monte_carlo, NoiseCoupling, NonidentifiablePair, OracleMethod, OracleValue,
    PotentialOutcomes, SynthConfig,
};
