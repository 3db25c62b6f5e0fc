//! Plug-in estimators of the treatment-effect variance.
//!
//! Four nuisance regressions are fit per treatment arm by kernel ridge
//! regression: `f_a(x) = E[Y | A=a, X=x]` and `g_a(x) = E[Y^2 | A=a, X=x]`.
//! The marginal estimate averages `g1 + g0 - 2 f1 f0` over all rows and
//! subtracts the squared average of `f1 - f0`; the conditional estimate
//! replaces the uniform average with embedding weights.

use serde::{Deserialize, Serialize};

use crate::cme::{fit_cme, select_lambda_v, CmeModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, gram_symmetric, median_heuristic, KernelPart, KernelSpec};
use crate::krr::{default_lambda_grid, fit_with_gram, KrrModel, LooPath};
use crate::matrix::Matrix;

/// How the four nuisance regularizers are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Independent leave-one-out selection per model over `grid`.
    Loo { grid: Vec<f64> },
    Fixed(NuisanceLambdas),
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Loo {
            grid: default_lambda_grid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceLambdas {
    pub f0: f64,
    pub f1: f64,
    pub g0: f64,
    pub g1: f64,
}

/// Regularizer of the conditional mean embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingLambda {
    Loo { grid: Vec<f64> },
    Fixed(f64),
}

impl Default for EmbeddingLambda {
    fn default() -> Self {
        EmbeddingLambda::Loo {
            grid: default_lambda_grid(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceModels {
    pub f0: KrrModel,
    pub f1: KrrModel,
    pub g0: KrrModel,
    pub g1: KrrModel,
    kernel: KernelSpec,
    arm0: Vec<usize>,
    arm1: Vec<usize>,
}

impl NuisanceModels {
    /// Assembles models fit elsewhere. All four must share one kernel.
    pub fn from_parts(
        f0: KrrModel,
        f1: KrrModel,
        g0: KrrModel,
        g1: KrrModel,
        arm0: Vec<usize>,
        arm1: Vec<usize>,
    ) -> Result<Self> {
        let kernel = f0.kernel().clone();
        if [&f1, &g0, &g1].iter().any(|m| m.kernel() != &kernel) {
            return Err(Error::input("nuisance models must share one kernel"));
        }
        if f0.train_inputs().nrows() != g0.train_inputs().nrows()
            || f1.train_inputs().nrows() != g1.train_inputs().nrows()
        {
            return Err(Error::input("f and g models of an arm must share training rows"));
        }
        Ok(NuisanceModels {
            f0,
            f1,
            g0,
            g1,
            kernel,
            arm0,
            arm1,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn arm_indices(&self, arm: bool) -> &[usize] {
        if arm {
            &self.arm1
        } else {
            &self.arm0
        }
    }

    pub fn lambdas(&self) -> NuisanceLambdas {
        NuisanceLambdas {
            f0: self.f0.lambda(),
            f1: self.f1.lambda(),
            g0: self.g0.lambda(),
            g1: self.g1.lambda(),
        }
    }

    /// All four nuisances at `rows`, sharing one cross-Gram per arm.
    pub fn predict(&self, rows: &Matrix) -> Result<NuisancePredictions> {
        let cross0 = gram_matrix(&self.kernel, rows, self.f0.train_inputs())?;
        let f0 = self.f0.predict_with_cross_gram(&cross0);
        let g0 = self.g0.predict_with_cross_gram(&cross0);
        drop(cross0);
        let cross1 = gram_matrix(&self.kernel, rows, self.f1.train_inputs())?;
        let f1 = self.f1.predict_with_cross_gram(&cross1);
        let g1 = self.g1.predict_with_cross_gram(&cross1);
        Ok(NuisancePredictions { f0, f1, g0, g1 })
    }

    /// `f1 - f0` at each row.
    pub fn cate(&self, rows: &Matrix) -> Result<Vec<f64>> {
        let p = self.predict(rows)?;
        p.check_finite()?;
        Ok(p.cate())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

impl NuisancePredictions {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn cate(&self) -> Vec<f64> {
        self.f1.iter().zip(&self.f0).map(|(a, b)| a - b).collect()
    }

    fn check_finite(&self) -> Result<()> {
        let n = self.len();
        if [&self.f1, &self.g0, &self.g1].iter().any(|v| v.len() != n) {
            return Err(Error::input("nuisance prediction vectors differ in length"));
        }
        let all = self.f0.iter().chain(&self.f1).chain(&self.g0).chain(&self.g1);
        if all.into_iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric("nuisance predictions are not finite"))
        }
    }
}

fn fit_arm(
    data: &Dataset,
    arm: bool,
    kernel: &KernelSpec,
    policy: &LambdaPolicy,
) -> Result<(KrrModel, KrrModel, Vec<usize>)> {
    let idx = data.arm_indices(arm);
    let inputs = data.x().select_rows(&idx);
    let y: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
    let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
    let gram = gram_symmetric(kernel, &inputs)?;
    let (lf, lg) = match policy {
        LambdaPolicy::Fixed(l) => {
            if arm {
                (l.f1, l.g1)
            } else {
                (l.f0, l.g0)
            }
        }
        LambdaPolicy::Loo { grid } if grid.len() == 1 => (grid[0], grid[0]),
        LambdaPolicy::Loo { grid } => {
            let path = LooPath::new(&gram)?;
            (path.select(&y, grid)?, path.select(&y2, grid)?)
        }
    };
    let f = fit_with_gram(&inputs, &gram, &y, lf, kernel)?;
    let g = fit_with_gram(&inputs, &gram, &y2, lg, kernel)?;
    Ok((f, g, idx))
}

pub fn fit_nuisances(
    data: &Dataset,
    kernel: &KernelSpec,
    policy: &LambdaPolicy,
) -> Result<NuisanceModels> {
    data.require_arms(2)?;
    kernel.validate()?;
    kernel.check_dim(data.dim())?;
    if let LambdaPolicy::Loo { grid } = policy {
        if grid.is_empty() {
            return Err(Error::input("regularization grid is empty"));
        }
    }
    let (f0, g0, arm0) = fit_arm(data, false, kernel, policy)?;
    let (f1, g1, arm1) = fit_arm(data, true, kernel, policy)?;
    Ok(NuisanceModels {
        f0,
        f1,
        g0,
        g1,
        kernel: kernel.clone(),
        arm0,
        arm1,
    })
}

/// Weighted plug-in value and its two additive parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlugIn {
    pub estimate: f64,
    pub cate_variance: f64,
    pub exogenous: f64,
}

/// `sum w (g1 + g0 - 2 f1 f0) - (sum w (f1 - f0))^2`, with
/// `cate_variance = sum w tau^2 - (sum w tau)^2` and
/// `exogenous = sum w (g1 - f1^2 + g0 - f0^2)`.
pub fn plug_in(weights: &[f64], p: &NuisancePredictions) -> Result<PlugIn> {
    p.check_finite()?;
    if weights.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: weights.len(),
        });
    }
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::numeric("weights are not finite"));
    }
    let (mut second, mut first, mut tau_sq, mut exo) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        let w = weights[i];
        let (f0, f1, g0, g1) = (p.f0[i], p.f1[i], p.g0[i], p.g1[i]);
        let tau = f1 - f0;
        second += w * (g1 + g0 - 2.0 * f1 * f0);
        first += w * tau;
        tau_sq += w * tau * tau;
        exo += w * ((g1 - f1 * f1) + (g0 - f0 * f0));
    }
    let out = PlugIn {
        estimate: second - first * first,
        cate_variance: tau_sq - first * first,
        exogenous: exo,
    };
    if out.estimate.is_finite() && out.cate_variance.is_finite() && out.exogenous.is_finite() {
        Ok(out)
    } else {
        Err(Error::numeric("plug-in estimate is not finite"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub cate_variance: f64,
    pub exogenous: f64,
    pub lambdas: NuisanceLambdas,
    pub lambda_v: Option<f64>,
    pub bandwidths: Vec<f64>,
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    /// Set when the estimate is below zero; the value is reported untruncated.
    pub negative_estimate: bool,
}

impl EstimateReport {
    fn new(parts: PlugIn, models: &NuisanceModels, n: usize, lambda_v: Option<f64>) -> Self {
        EstimateReport {
            estimate: parts.estimate,
            cate_variance: parts.cate_variance,
            exogenous: parts.exogenous,
            lambdas: models.lambdas(),
            lambda_v,
            bandwidths: models.kernel.bandwidths(),
            n,
            n0: models.arm0.len(),
            n1: models.arm1.len(),
            negative_estimate: parts.estimate < 0.0,
        }
    }
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn estimate_vte(data: &Dataset, models: &NuisanceModels) -> Result<EstimateReport> {
    estimate_cvte_with_weights(data, models, &uniform_weights(data.n()))
}

/// `(cate_variance, exogenous)`; they sum to the marginal estimate.
pub fn vte_decomposition(models: &NuisanceModels, data: &Dataset) -> Result<(f64, f64)> {
    let r = estimate_vte(data, models)?;
    Ok((r.cate_variance, r.exogenous))
}

/// Plug-in over all rows of `data.x()` with caller-supplied weights.
pub fn estimate_cvte_with_weights(
    data: &Dataset,
    models: &NuisanceModels,
    weights: &[f64],
) -> Result<EstimateReport> {
    if data.n() == 0 {
        return Err(Error::input("dataset is empty"));
    }
    let preds = models.predict(data.x())?;
    let parts = plug_in(weights, &preds)?;
    Ok(EstimateReport::new(parts, models, data.n(), None))
}

/// Conditional estimate at `v` for conditioning variables stored alongside
/// the covariates. The embedding must be fit on `data.v()`.
pub fn estimate_cvte(
    data: &Dataset,
    models: &NuisanceModels,
    cme: &CmeModel,
    v: &[f64],
) -> Result<EstimateReport> {
    let vrows = data
        .v()
        .ok_or_else(|| Error::input("dataset has no conditioning variables"))?;
    if cme.n() != data.n() || cme.train_v().ncols() != vrows.ncols() {
        return Err(Error::input("embedding was not fit on this dataset's conditioning variables"));
    }
    let weights = cme.weights(v)?;
    let mut report = estimate_cvte_with_weights(data, models, &weights)?;
    report.lambda_v = Some(cme.lambda_v());
    Ok(report)
}

/// Options for the marginal estimator and the general conditional one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposedOptions {
    /// Covariate bandwidth; median heuristic when absent.
    pub bandwidth: Option<f64>,
    /// Conditioning-variable bandwidth; median heuristic when absent.
    pub conditioning_bandwidth: Option<f64>,
    pub nuisance_lambdas: LambdaPolicy,
    pub embedding_lambda: EmbeddingLambda,
}

fn bandwidth_or_median(bw: Option<f64>, rows: &Matrix) -> Result<KernelSpec> {
    match bw {
        Some(b) => KernelSpec::gaussian(b),
        None => KernelSpec::gaussian(median_heuristic(rows)?),
    }
}

/// Gaussian nuisances with median-heuristic bandwidth, then the marginal
/// plug-in estimate.
pub fn proposed_vte(data: &Dataset, opts: &ProposedOptions) -> Result<(EstimateReport, NuisanceModels)> {
    let kernel = bandwidth_or_median(opts.bandwidth, data.x())?;
    let models = fit_nuisances(data, &kernel, &opts.nuisance_lambdas)?;
    let report = estimate_vte(data, &models)?;
    Ok((report, models))
}

fn resolve_lambda_v(
    policy: &EmbeddingLambda,
    v_rows: &Matrix,
    x_rows: &Matrix,
    kernel_v: &KernelSpec,
    kernel_x: &KernelSpec,
) -> Result<f64> {
    match policy {
        EmbeddingLambda::Fixed(l) => Ok(*l),
        EmbeddingLambda::Loo { grid } => select_lambda_v(v_rows, x_rows, kernel_v, kernel_x, grid),
    }
}

/// Conditional estimate for conditioning variables `data.v()` that are not
/// covariates, fitting every model from scratch.
pub fn proposed_cvte(data: &Dataset, v: &[f64], opts: &ProposedOptions) -> Result<EstimateReport> {
    let vrows = data
        .v()
        .ok_or_else(|| Error::input("dataset has no conditioning variables"))?;
    let kernel_x = bandwidth_or_median(opts.bandwidth, data.x())?;
    let kernel_v = bandwidth_or_median(opts.conditioning_bandwidth, vrows)?;
    let models = fit_nuisances(data, &kernel_x, &opts.nuisance_lambdas)?;
    let lambda_v = resolve_lambda_v(&opts.embedding_lambda, vrows, data.x(), &kernel_v, &kernel_x)?;
    let cme = fit_cme(vrows, lambda_v, &kernel_v)?;
    let mut report = estimate_cvte(data, &models, &cme, v)?;
    report.bandwidths.extend(kernel_v.bandwidths());
    Ok(report)
}

/// Kernels and regularizers for conditioning on a strict subset of the
/// covariates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetOptions {
    /// Bandwidth on the remaining covariates; median heuristic when absent.
    pub remainder_bandwidth: Option<f64>,
    /// Bandwidth on the conditioning columns; median heuristic when absent.
    pub conditioning_bandwidth: Option<f64>,
    pub nuisance_lambdas: LambdaPolicy,
    pub embedding_lambda: EmbeddingLambda,
}

fn split_columns(d: usize, v_columns: &[usize]) -> Result<Vec<usize>> {
    if v_columns.is_empty() {
        return Err(Error::input("conditioning column set is empty"));
    }
    let mut seen = vec![false; d];
    for &c in v_columns {
        if c >= d {
            return Err(Error::input(format!("conditioning column {c} out of range for dimension {d}")));
        }
        if seen[c] {
            return Err(Error::input(format!("conditioning column {c} listed twice")));
        }
        seen[c] = true;
    }
    let rest: Vec<usize> = (0..d).filter(|&c| !seen[c]).collect();
    if rest.is_empty() {
        return Err(Error::input(
            "conditioning columns must leave at least one covariate outside the set",
        ));
    }
    Ok(rest)
}

/// Copies of `rows` with the conditioning columns set to `v`.
fn clamp_columns(rows: &Matrix, v_columns: &[usize], v: &[f64]) -> Matrix {
    let mut out = rows.clone();
    for i in 0..out.nrows() {
        let r = out.row_mut(i);
        for (&c, &value) in v_columns.iter().zip(v) {
            r[c] = value;
        }
    }
    out
}

fn check_query(v_columns: &[usize], v: &[f64]) -> Result<()> {
    if v.len() != v_columns.len() {
        return Err(Error::DimensionMismatch {
            expected: v_columns.len(),
            got: v.len(),
        });
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::input("conditioning value is not finite"));
    }
    Ok(())
}

/// Conditional estimate given fitted models and an embedding fit on
/// `data.x()[:, v_columns]`. Nuisances are evaluated at each row with its
/// conditioning columns replaced by `v`.
pub fn estimate_cvte_subset_with(
    data: &Dataset,
    v_columns: &[usize],
    v: &[f64],
    models: &NuisanceModels,
    cme: &CmeModel,
) -> Result<EstimateReport> {
    split_columns(data.dim(), v_columns)?;
    check_query(v_columns, v)?;
    if cme.n() != data.n() || cme.train_v().ncols() != v_columns.len() {
        return Err(Error::input("embedding was not fit on this dataset's conditioning columns"));
    }
    let weights = cme.weights(v)?;
    let clamped = clamp_columns(data.x(), v_columns, v);
    let preds = models.predict(&clamped)?;
    let parts = plug_in(&weights, &preds)?;
    Ok(EstimateReport::new(parts, models, data.n(), Some(cme.lambda_v())))
}

/// Conditional estimate at `X[v_columns] = v` for a strict subset of the
/// covariates. All four nuisances use the product kernel
/// `k_rest(x~, x~') k_v(v, v')`; embedding weights come from the conditioning
/// columns with the remaining covariates as the embedded variable.
pub fn estimate_cvte_subset(
    data: &Dataset,
    v_columns: &[usize],
    v: &[f64],
    opts: &SubsetOptions,
) -> Result<EstimateReport> {
    let rest = split_columns(data.dim(), v_columns)?;
    check_query(v_columns, v)?;
    let x_rest = data.x().select_cols(&rest);
    let x_v = data.x().select_cols(v_columns);
    let kernel_rest = bandwidth_or_median(opts.remainder_bandwidth, &x_rest)?;
    let kernel_v = bandwidth_or_median(opts.conditioning_bandwidth, &x_v)?;
    let composite = KernelSpec::product(
        data.dim(),
        vec![
            KernelPart {
                columns: rest,
                kernel: kernel_rest.clone(),
            },
            KernelPart {
                columns: v_columns.to_vec(),
                kernel: kernel_v.clone(),
            },
        ],
    )?;
    let models = fit_nuisances(data, &composite, &opts.nuisance_lambdas)?;
    let lambda_v = resolve_lambda_v(&opts.embedding_lambda, &x_v, &x_rest, &kernel_v, &kernel_rest)?;
    let cme = fit_cme(&x_v, lambda_v, &kernel_v)?;
    estimate_cvte_subset_with(data, v_columns, v, &models, &cme)
}
