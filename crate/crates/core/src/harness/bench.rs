use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    cate_variance_baseline, cate_variance_on, fit_propensity, match_vte, naive_vte, MatchConfig,
    MatchMetric, DEFAULT_MATCH_K,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_cvte_subset, estimate_vte, fit_nuisances, EmbeddingLambda, LambdaPolicy,
    NuisanceModels, SubsetOptions,
};
use crate::kernel::KernelSpec;
use crate::krr::default_lambda_grid;
use crate::simdata::{gen_synthetic, true_cvte, true_vte, NoiseCoupling, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Naive,
    CateVar,
    MatchEuclid,
    MatchPsm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Proposed,
        Method::Naive,
        Method::CateVar,
        Method::MatchEuclid,
        Method::MatchPsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Naive => "naive",
            Method::CateVar => "cate_var",
            Method::MatchEuclid => "match_euclid",
            Method::MatchPsm => "match_psm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown method '{s}'")))
    }
}

/// Conditioning on covariate `column` (0-based) at `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: usize,
    pub value: f64,
}

impl Condition {
    /// Parses `x<k>=<value>` with 1-based `k`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::input(format!("condition must look like 'x2=0', got '{spec}'"));
        let (lhs, rhs) = spec.split_once('=').ok_or_else(bad)?;
        let k: usize = lhs.trim().strip_prefix('x').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::input("covariate indices in conditions start at 1"));
        }
        let value: f64 = rhs.trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        Ok(Condition { column: k - 1, value })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}={}", self.column + 1, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimand {
    Vte,
    Cvte(Condition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub estimand: Estimand,
    pub subset_tolerance: f64,
    pub k: usize,
    pub lambda_grid: Vec<f64>,
    pub lambda_v_grid: Vec<f64>,
    pub d: usize,
    pub rho: f64,
    pub noise_sd: f64,
    pub coupling: NoiseCoupling,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            methods: Method::ALL.to_vec(),
            sizes: vec![500],
            reps: 20,
            seed: 0,
            estimand: Estimand::Vte,
            subset_tolerance: 0.1,
            k: DEFAULT_MATCH_K,
            lambda_grid: default_lambda_grid(),
            lambda_v_grid: default_lambda_grid(),
            d: 100,
            rho: 0.5,
            noise_sd: 1.0,
            coupling: NoiseCoupling::IndependentNoises,
            out_dir: None,
        }
    }
}

fn check_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() || !grid.iter().all(|l| l.is_finite() && *l > 0.0) {
        return Err(Error::input(format!("{what} must be a non-empty list of positive values")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::input("reps must be at least 1"));
        }
        if self.sizes.is_empty() {
            return Err(Error::input("sizes must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::input("methods must not be empty"));
        }
        if self.k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        if !(self.subset_tolerance.is_finite() && self.subset_tolerance > 0.0) {
            return Err(Error::input("subset tolerance must be positive"));
        }
        check_grid(&self.lambda_grid, "lambda grid")?;
        check_grid(&self.lambda_v_grid, "embedding lambda grid")?;
        for &n in &self.sizes {
            self.synth(n, self.seed).validate()?;
        }
        if let Estimand::Cvte(c) = self.estimand {
            if c.column >= self.d {
                return Err(Error::input(format!(
                    "condition {c} refers to a column beyond d={}",
                    self.d
                )));
            }
        }
        Ok(())
    }

    pub fn synth(&self, n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n,
            d: self.d,
            rho: self.rho,
            noise_sd: self.noise_sd,
            seed,
            coupling: self.coupling,
            effect_scale: 1.0,
        }
    }

    fn truth(&self) -> Result<f64> {
        let cfg = self.synth(self.sizes[0], self.seed);
        Ok(match self.estimand {
            Estimand::Vte => true_vte(&cfg)?.value,
            Estimand::Cvte(c) => true_cvte(&cfg, c.column, c.value)?.value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub abs_error: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean absolute error over successful repetitions.
    pub mae: Option<f64>,
    /// Sample standard deviation of absolute errors over sqrt(successes).
    pub se: Option<f64>,
    pub mean_estimate: Option<f64>,
    /// Sample standard deviation of the estimates over sqrt(successes).
    pub estimate_se: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

impl Summary {
    pub fn from_reps(reps: &[RepRecord]) -> Self {
        let est: Vec<f64> = reps.iter().filter_map(|r| r.estimate).collect();
        let err: Vec<f64> = reps.iter().filter_map(|r| r.abs_error).collect();
        let root = (est.len() as f64).sqrt();
        Summary {
            mae: (!err.is_empty()).then(|| mean(&err)),
            se: sample_sd(&err).map(|s| s / root),
            mean_estimate: (!est.is_empty()).then(|| mean(&est)),
            estimate_se: sample_sd(&est).map(|s| s / root),
            successes: est.len(),
            failures: reps.len() - est.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub size: usize,
    pub truth: f64,
    pub reps: Vec<RepRecord>,
    pub summary: Summary,
}

impl CellResult {
    pub fn estimates(&self) -> Vec<f64> {
        self.reps.iter().filter_map(|r| r.estimate).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub config: RunConfig,
    pub truth: f64,
    pub cells: Vec<CellResult>,
}

impl BenchmarkResult {
    pub fn cell(&self, method: Method, size: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.method == method && c.size == size)
    }

    /// Copy with every timing zeroed, for comparing runs.
    pub fn without_timings(&self) -> BenchmarkResult {
        let mut out = self.clone();
        for c in &mut out.cells {
            for r in &mut c.reps {
                r.seconds = 0.0;
            }
        }
        out
    }
}

/// One finished `(method, size, rep)` evaluation.
#[derive(Debug, Clone)]
pub struct Progress<'a> {
    pub method: Method,
    pub size: usize,
    pub record: &'a RepRecord,
}

pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkResult> {
    run_benchmark_with_progress(cfg, |_| {})
}

pub fn run_benchmark_with_progress(
    cfg: &RunConfig,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let mut methods: Vec<Method> = Vec::new();
    for &m in &cfg.methods {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let mut cells = Vec::new();
    for &size in &cfg.sizes {
        let mut per_method: Vec<Vec<RepRecord>> = vec![Vec::new(); methods.len()];
        for rep in 0..cfg.reps {
            let seed = cfg.seed.wrapping_add(rep as u64);
            let data = gen_synthetic(&cfg.synth(size, seed))?.0;
            let mut runner = RepRunner::new(cfg, &data);
            for (slot, &method) in methods.iter().enumerate() {
                let start = Instant::now();
                let outcome = runner.run(method);
                let seconds = start.elapsed().as_secs_f64();
                let record = match outcome {
                    Ok(est) => RepRecord {
                        rep,
                        seed,
                        estimate: Some(est),
                        abs_error: Some((est - truth).abs()),
                        error: None,
                        seconds,
                    },
                    Err(e) => RepRecord {
                        rep,
                        seed,
                        estimate: None,
                        abs_error: None,
                        error: Some(e.to_string()),
                        seconds,
                    },
                };
                progress(Progress {
                    method,
                    size,
                    record: &record,
                });
                per_method[slot].push(record);
            }
        }
        for (method, reps) in methods.iter().zip(per_method) {
            cells.push(CellResult {
                method: *method,
                size,
                truth,
                summary: Summary::from_reps(&reps),
                reps,
            });
        }
    }
    Ok(BenchmarkResult {
        config: cfg.clone(),
        truth,
        cells,
    })
}

/// Runs methods on one generated dataset, sharing fitted nuisances between
/// the proposed marginal estimator and the CATE baseline.
struct RepRunner<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    vte_models: Option<NuisanceModels>,
}

impl<'a> RepRunner<'a> {
    fn new(cfg: &'a RunConfig, data: &'a Dataset) -> Self {
        RepRunner {
            cfg,
            data,
            vte_models: None,
        }
    }

    fn nuisance_policy(&self) -> LambdaPolicy {
        LambdaPolicy::Loo {
            grid: self.cfg.lambda_grid.clone(),
        }
    }

    fn subset_options(&self) -> SubsetOptions {
        SubsetOptions {
            nuisance_lambdas: self.nuisance_policy(),
            embedding_lambda: EmbeddingLambda::Loo {
                grid: self.cfg.lambda_v_grid.clone(),
            },
            ..SubsetOptions::default()
        }
    }

    fn marginal_models(&mut self) -> Result<&NuisanceModels> {
        if self.vte_models.is_none() {
            let kernel = KernelSpec::gaussian_median(self.data.x())?;
            self.vte_models = Some(fit_nuisances(self.data, &kernel, &self.nuisance_policy())?);
        }
        Ok(self.vte_models.as_ref().expect("just set"))
    }

    fn subset(&self, c: Condition) -> Dataset {
        let idx: Vec<usize> = (0..self.data.n())
            .filter(|&i| (self.data.x().get(i, c.column) - c.value).abs() <= self.cfg.subset_tolerance)
            .collect();
        self.data.subset(&idx)
    }

    fn matching(&self, data: &Dataset, metric: MatchMetric) -> Result<f64> {
        let cfg = MatchConfig { k: self.cfg.k, metric };
        match metric {
            MatchMetric::EuclideanStandardized => match_vte(data, &cfg, None),
            MatchMetric::PropensityScore => match_vte(data, &cfg, Some(&fit_propensity(data)?)),
        }
    }

    fn run(&mut self, method: Method) -> Result<f64> {
        match self.cfg.estimand {
            Estimand::Vte => match method {
                Method::Proposed => {
                    let data = self.data;
                    Ok(estimate_vte(data, self.marginal_models()?)?.estimate)
                }
                Method::CateVar => {
                    let data = self.data;
                    cate_variance_baseline(data, self.marginal_models()?)
                }
                Method::Naive => naive_vte(self.data),
                Method::MatchEuclid => self.matching(self.data, MatchMetric::EuclideanStandardized),
                Method::MatchPsm => self.matching(self.data, MatchMetric::PropensityScore),
            },
            Estimand::Cvte(c) => match method {
                Method::Proposed => {
                    let opts = self.subset_options();
                    Ok(estimate_cvte_subset(self.data, &[c.column], &[c.value], &opts)?.estimate)
                }
                Method::CateVar => {
                    let rows = self.subset(c);
                    if rows.n() == 0 {
                        return Err(Error::input("conditioning subset is empty"));
                    }
                    cate_variance_on(self.marginal_models()?, rows.x())
                }
                Method::Naive => naive_vte(&self.subset(c)),
                Method::MatchEuclid => self.matching(&self.subset(c), MatchMetric::EuclideanStandardized),
                Method::MatchPsm => self.matching(&self.subset(c), MatchMetric::PropensityScore),
            },
        }
    }
}
