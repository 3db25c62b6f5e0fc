//! Synthetic confounded data with known treatment-effect variance.
//!
//! `X ~ N(0, Sigma)` with tridiagonal `Sigma` (unit diagonal, `rho` off the
//! diagonal), `A ~ Bernoulli(Phi(beta^T X))` with `beta_i = 1/(i+1)^2` for
//! 1-based `i`, `Y0 = beta^T X + e0` and `Y1 = beta^T X + s X_1 + e1`.
//!
//! Every repetition uses a ChaCha20 stream seeded with the configured seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::dataset::{population_variance, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    #[default]
    IndependentNoises,
    SharedNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub rho: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub coupling: NoiseCoupling,
    /// Coefficient on `X_1` in the treated outcome; 0 ablates the effect.
    pub effect_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 500,
            d: 100,
            rho: 0.5,
            noise_sd: 1.0,
            seed: 0,
            coupling: NoiseCoupling::IndependentNoises,
            effect_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::input("sample size must be positive"));
        }
        if self.d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::input("noise standard deviation must be finite and nonnegative"));
        }
        if !self.effect_scale.is_finite() {
            return Err(Error::input("effect scale must be finite"));
        }
        TridiagonalCholesky::new(self.d, self.rho)?;
        Ok(())
    }
}

/// Coefficients `beta_i = 1/(i+1)^2`, 1-based, so `beta_1 = 1/4`.
pub fn beta(d: usize) -> Vec<f64> {
    (1..=d).map(|i| 1.0 / ((i + 1) * (i + 1)) as f64).collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Lower-bidiagonal Cholesky factor of the tridiagonal covariance.
#[derive(Debug, Clone)]
pub struct TridiagonalCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl TridiagonalCholesky {
    pub fn new(d: usize, rho: f64) -> Result<Self> {
        if !rho.is_finite() {
            return Err(Error::input("correlation must be finite"));
        }
        let mut diag = Vec::with_capacity(d);
        let mut sub = Vec::with_capacity(d);
        for i in 0..d {
            let m: f64 = if i == 0 { 0.0 } else { rho / diag[i - 1] };
            let pivot = 1.0 - m * m;
            if !(pivot > 0.0) {
                return Err(Error::input(format!(
                    "covariance with rho={rho} is not positive definite in dimension {d}"
                )));
            }
            sub.push(m);
            diag.push(pivot.sqrt());
        }
        Ok(TridiagonalCholesky { diag, sub })
    }

    /// Fills `out` with the leading `out.len()` coordinates of `L z` for
    /// fresh standard normal `z`.
    fn sample_prefix(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let mut prev_z = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *o = self.sub[i] * prev_z + self.diag[i] * z;
            prev_z = z;
        }
    }
}

/// Both potential outcomes for every unit; hidden from estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialOutcomes {
    /// Sample variance (population form) of the realized per-unit effects.
    pub fn effect_variance(&self) -> f64 {
        let te: Vec<f64> = self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect();
        population_variance(&te)
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(Dataset, PotentialOutcomes)> {
    cfg.validate()?;
    let chol = TridiagonalCholesky::new(cfg.d, cfg.rho)?;
    let beta = beta(cfg.d);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut x = Matrix::zeros(cfg.n, cfg.d);
    let mut a = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    let mut y0s = Vec::with_capacity(cfg.n);
    let mut y1s = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let row = x.row_mut(i);
        chol.sample_prefix(&mut rng, row);
        let index: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
        let u: f64 = rng.random();
        let e0 = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let e1_draw = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let e1 = match cfg.coupling {
            NoiseCoupling::IndependentNoises => e1_draw,
            NoiseCoupling::SharedNoise => e0,
        };
        let treated = u < normal_cdf(index);
        let y0 = index + e0;
        let y1 = index + cfg.effect_scale * row[0] + e1;
        a.push(treated);
        y.push(if treated { y1 } else { y0 });
        y0s.push(y0);
        y1s.push(y1);
    }
    let data = Dataset::new(x, a, y, None)?;
    Ok((data, PotentialOutcomes { y0: y0s, y1: y1s }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub method: OracleMethod,
    pub mc_samples: Option<u64>,
    pub mc_stderr: Option<f64>,
}

impl OracleValue {
    fn closed_form(value: f64) -> Self {
        OracleValue {
            value,
            method: OracleMethod::ClosedForm,
            mc_samples: None,
            mc_stderr: None,
        }
    }

    fn monte_carlo(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for s in samples {
            let c = (s - mean).powi(2);
            m2 += c;
            m4 += c * c;
        }
        m2 /= n;
        m4 /= n;
        OracleValue {
            value: m2,
            method: OracleMethod::MonteCarlo,
            mc_samples: Some(samples.len() as u64),
            mc_stderr: Some(((m4 - m2 * m2).max(0.0) / n).sqrt()),
        }
    }
}

pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

/// `Var(X_1) s^2 + 2 noise_sd^2`, the value identified under uncorrelated
/// potential-outcome noise. It does not depend on the coupling.
pub fn true_vte(cfg: &SynthConfig) -> Result<OracleValue> {
    cfg.validate()?;
    Ok(OracleValue::closed_form(
        cfg.effect_scale.powi(2) + 2.0 * cfg.noise_sd.powi(2),
    ))
}

fn effect_draw(cfg: &SynthConfig, rng: &mut impl Rng, x1: f64) -> f64 {
    let e0 = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
    let e1 = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
    cfg.effect_scale * x1 + e1 - e0
}

/// Sample variance of `Y1 - Y0` over fresh units with independent noises.
pub fn true_vte_monte_carlo(cfg: &SynthConfig, samples: usize, seed: u64) -> Result<OracleValue> {
    cfg.validate()?;
    if samples < 2 {
        return Err(Error::input("Monte Carlo needs at least 2 samples"));
    }
    let chol = TridiagonalCholesky::new(cfg.d, cfg.rho)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = [0.0];
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            chol.sample_prefix(&mut rng, &mut x);
            effect_draw(cfg, &mut rng, x[0])
        })
        .collect();
    Ok(OracleValue::monte_carlo(&draws))
}

fn check_column(cfg: &SynthConfig, column: usize) -> Result<()> {
    if column >= cfg.d {
        return Err(Error::input(format!(
            "conditioning column {column} out of range for dimension {}",
            cfg.d
        )));
    }
    Ok(())
}

/// Closed-form `Var(Y1 - Y0 | X_column = value)`; for Gaussian covariates the
/// value does not matter.
pub fn true_cvte(cfg: &SynthConfig, column: usize, value: f64) -> Result<OracleValue> {
    cfg.validate()?;
    check_column(cfg, column)?;
    if !value.is_finite() {
        return Err(Error::input("conditioning value must be finite"));
    }
    let cov = match column {
        0 => 1.0,
        1 => cfg.rho,
        _ => 0.0,
    };
    let conditional = 1.0 - cov * cov;
    Ok(OracleValue::closed_form(
        cfg.effect_scale.powi(2) * conditional + 2.0 * cfg.noise_sd.powi(2),
    ))
}

/// Rejection Monte Carlo keeping draws with `|X_column - value| <= window`
/// until `accepted` samples are collected.
pub fn true_cvte_monte_carlo(
    cfg: &SynthConfig,
    column: usize,
    value: f64,
    window: f64,
    accepted: usize,
    seed: u64,
) -> Result<OracleValue> {
    cfg.validate()?;
    check_column(cfg, column)?;
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::input("acceptance window must be positive"));
    }
    if accepted < 2 {
        return Err(Error::input("Monte Carlo needs at least 2 samples"));
    }
    let chol = TridiagonalCholesky::new(cfg.d, cfg.rho)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = vec![0.0; column + 1];
    let mut draws = Vec::with_capacity(accepted);
    while draws.len() < accepted {
        chol.sample_prefix(&mut rng, &mut x);
        if (x[column] - value).abs() <= window {
            draws.push(effect_draw(cfg, &mut rng, x[0]));
        }
    }
    Ok(OracleValue::monte_carlo(&draws))
}

/// Two datasets with the same observational law but different effect
/// variance: `Y1 = Y0` and `Y1 = -Y0`, with `X, Y0 ~ N(0, 1)` and a fair coin
/// for treatment.
#[derive(Debug, Clone)]
pub struct NonidentifiablePair {
    pub identical: Dataset,
    pub negated: Dataset,
    /// Oracle VTEs of the two cases: `(0, 4)`.
    pub oracle_vtes: (f64, f64),
}

pub fn gen_nonidentifiable_pair(n: usize, seed: u64) -> Result<NonidentifiablePair> {
    if n < 2 {
        return Err(Error::input("need at least 2 units"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut same = Vec::with_capacity(n);
    let mut flipped = Vec::with_capacity(n);
    for _ in 0..n {
        x.push(rng.sample::<f64, _>(StandardNormal));
        let treated = rng.random::<f64>() < 0.5;
        let y0: f64 = rng.sample(StandardNormal);
        a.push(treated);
        same.push(y0);
        flipped.push(if treated { -y0 } else { y0 });
    }
    let x = Matrix::column(&x);
    Ok(NonidentifiablePair {
        identical: Dataset::new(x.clone(), a.clone(), same, None)?,
        negated: Dataset::new(x, a, flipped, None)?,
        oracle_vtes: (0.0, 4.0),
    })
}
