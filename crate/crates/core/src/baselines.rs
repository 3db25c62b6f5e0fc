//! Comparison estimators: naive arm variances, CATE variance, and k-nearest
//! neighbour matching on standardized covariates or propensity scores.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dataset::{population_variance, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{plug_in, NuisanceModels};
use crate::linalg::SpdFactor;
use crate::matrix::{squared_distance, Matrix};

/// `Var(Y | A=1) + Var(Y | A=0)`, ignoring covariates.
pub fn naive_vte(data: &Dataset) -> Result<f64> {
    data.require_arms(1)?;
    Ok(population_variance(&data.arm_outcomes(true)) + population_variance(&data.arm_outcomes(false)))
}

/// Variance of `f1 - f0` over the rows of `data`.
pub fn cate_variance_baseline(data: &Dataset, models: &NuisanceModels) -> Result<f64> {
    cate_variance_on(models, data.x())
}

/// Variance of `f1 - f0` over arbitrary rows, computed with the same
/// arithmetic as the first term of the plug-in decomposition.
pub fn cate_variance_on(models: &NuisanceModels, rows: &Matrix) -> Result<f64> {
    if rows.nrows() == 0 {
        return Err(Error::input("no rows to evaluate the effect on"));
    }
    let weights = vec![1.0 / rows.nrows() as f64; rows.nrows()];
    Ok(plug_in(&weights, &models.predict(rows)?)?.cate_variance)
}

pub const PROPENSITY_RIDGE: f64 = 1e-4;
pub const PROPENSITY_MAX_ITER: usize = 100;
pub const PROPENSITY_GRAD_TOL: f64 = 1e-8;

/// Ridge-penalized logistic regression on standardized covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Intercept first, then one coefficient per standardized column.
    pub coefficients: Vec<f64>,
    pub ridge: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

struct Logistic<'a> {
    z: &'a Matrix,
    a: &'a [bool],
    ridge: f64,
}

impl Logistic<'_> {
    fn linear(&self, w: &[f64], row: &[f64]) -> f64 {
        w[0] + row.iter().zip(&w[1..]).map(|(x, b)| x * b).sum::<f64>()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let n = self.z.nrows() as f64;
        let loss: f64 = self
            .z
            .rows_iter()
            .zip(self.a)
            .map(|(r, &a)| {
                let t = self.linear(w, r);
                if a { softplus(-t) } else { softplus(t) }
            })
            .sum();
        loss / n + 0.5 * self.ridge * w[1..].iter().map(|b| b * b).sum::<f64>()
    }

    fn gradient_hessian(&self, w: &[f64]) -> (Vec<f64>, Mat<f64>) {
        let p = w.len();
        let n = self.z.nrows() as f64;
        let mut grad = vec![0.0; p];
        let mut hess = Mat::<f64>::zeros(p, p);
        let mut ext = vec![1.0; p];
        for (r, &a) in self.z.rows_iter().zip(self.a) {
            ext[1..].copy_from_slice(r);
            let mu = sigmoid(self.linear(w, r));
            let resid = mu - if a { 1.0 } else { 0.0 };
            let curv = mu * (1.0 - mu);
            for j in 0..p {
                grad[j] += resid * ext[j];
                let cj = curv * ext[j];
                for k in 0..=j {
                    hess[(j, k)] += cj * ext[k];
                }
            }
        }
        for j in 0..p {
            grad[j] /= n;
            for k in 0..=j {
                hess[(j, k)] /= n;
                hess[(k, j)] = hess[(j, k)];
            }
        }
        for j in 1..p {
            grad[j] += self.ridge * w[j];
            hess[(j, j)] += self.ridge;
        }
        (grad, hess)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton iterations with backtracking line search.
pub fn fit_propensity(data: &Dataset) -> Result<PropensityModel> {
    data.require_arms(1)?;
    let (means, scales): (Vec<f64>, Vec<f64>) = data
        .x()
        .column_moments()
        .into_iter()
        .map(|(m, s)| (m, if s > 0.0 { s } else { 1.0 }))
        .unzip();
    let z = standardize_with(data.x(), &means, &scales);
    let problem = Logistic {
        z: &z,
        a: data.treatment(),
        ridge: PROPENSITY_RIDGE,
    };
    let mut w = vec![0.0; data.dim() + 1];
    let mut f = problem.objective(&w);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=PROPENSITY_MAX_ITER {
        let (grad, hess) = problem.gradient_hessian(&w);
        grad_norm = norm(&grad);
        if grad_norm <= PROPENSITY_GRAD_TOL {
            return Ok(PropensityModel {
                coefficients: w,
                ridge: PROPENSITY_RIDGE,
                iterations: iter,
                gradient_norm: grad_norm,
                means,
                scales,
            });
        }
        if iter == PROPENSITY_MAX_ITER {
            break;
        }
        // the intercept is unpenalized; a tiny shift keeps the solve definite
        // when every unit has the same curvature-weighted design
        let mut h = hess;
        h[(0, 0)] += 1e-12;
        let step = SpdFactor::new(&h)?.solve_vec(&grad);
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            let fc = problem.objective(&cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-12 {
                w = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::numeric(format!(
        "propensity fit did not converge in {PROPENSITY_MAX_ITER} iterations (gradient norm {grad_norm:e})"
    )))
}

fn standardize_with(x: &Matrix, means: &[f64], scales: &[f64]) -> Matrix {
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x.get(i, j) - means[j]) / scales[j])
}

impl PropensityModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: x.len(),
            });
        }
        let t = self.coefficients[0]
            + x.iter()
                .zip(&self.means)
                .zip(&self.scales)
                .zip(&self.coefficients[1..])
                .map(|(((xi, m), s), b)| (xi - m) / s * b)
                .sum::<f64>();
        // near-separable arms can push |t| past where the logistic rounds to 0 or 1
        Ok(sigmoid(t).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
    }

    pub fn scores(&self, rows: &Matrix) -> Result<Vec<f64>> {
        rows.rows_iter().map(|r| self.score(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMetric {
    #[default]
    EuclideanStandardized,
    PropensityScore,
}

pub const DEFAULT_MATCH_K: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub k: usize,
    pub metric: MatchMetric,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            k: DEFAULT_MATCH_K,
            metric: MatchMetric::EuclideanStandardized,
        }
    }
}

/// Imputes each unit's missing potential outcome as the mean outcome of its
/// `k` nearest opposite-arm units, then returns the variance of the
/// resulting per-unit effects. Equal distances go to the lower row index.
pub fn match_vte(data: &Dataset, cfg: &MatchConfig, prop: Option<&PropensityModel>) -> Result<f64> {
    data.require_arms(1)?;
    let (n0, n1) = data.arm_sizes();
    if cfg.k == 0 || cfg.k > n0.min(n1) {
        return Err(Error::input(format!(
            "k must be in 1..={} for arm sizes ({n0}, {n1}), got {}",
            n0.min(n1),
            cfg.k
        )));
    }
    let coords = match cfg.metric {
        MatchMetric::EuclideanStandardized => data.x().standardized(),
        MatchMetric::PropensityScore => {
            let prop = prop.ok_or_else(|| {
                Error::input("propensity-score matching needs a fitted propensity model")
            })?;
            Matrix::column(&prop.scores(data.x())?)
        }
    };
    let arms = [data.arm_indices(false), data.arm_indices(true)];
    let y = data.y();
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n0.max(n1));
    let effects: Vec<f64> = (0..data.n())
        .map(|i| {
            let treated = data.treatment()[i];
            let pool = &arms[usize::from(!treated)];
            candidates.clear();
            let xi = coords.row(i);
            candidates.extend(pool.iter().map(|&j| (squared_distance(xi, coords.row(j)), j)));
            let by_distance =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cfg.k < candidates.len() {
                candidates.select_nth_unstable_by(cfg.k - 1, by_distance);
            }
            let imputed =
                candidates[..cfg.k].iter().map(|&(_, j)| y[j]).sum::<f64>() / cfg.k as f64;
            if treated { y[i] - imputed } else { imputed - y[i] }
        })
        .collect();
    Ok(population_variance(&effects))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(x: &[f64], a: &[u8], y: &[f64]) -> Dataset {
        Dataset::new(
            Matrix::column(x),
            a.iter().map(|&v| v == 1).collect(),
            y.to_vec(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn naive_examples() {
        let d = ds(&[0.0; 4], &[1, 1, 0, 0], &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(naive_vte(&d).unwrap(), 1.0);
        let c = ds(&[0.0; 4], &[1, 1, 0, 0], &[3.0; 4]);
        assert_eq!(naive_vte(&c).unwrap(), 0.0);
        let one_arm = ds(&[0.0; 2], &[1, 1], &[3.0; 2]);
        assert!(naive_vte(&one_arm).unwrap_err().is_input());
    }

    #[test]
    fn matching_homogeneous_effect() {
        let d = ds(&[0.0, 0.1, 1.0, 1.1], &[1, 0, 1, 0], &[1.0, 0.0, 2.0, 1.0]);
        let v = match_vte(&d, &MatchConfig { k: 1, ..Default::default() }, None).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn matching_duplicates_across_arms() {
        let d = ds(&[0.0, 0.0, 2.0, 2.0], &[1, 0, 1, 0], &[5.0, 5.0, -1.0, -1.0]);
        assert_eq!(match_vte(&d, &MatchConfig::default(), None).unwrap(), 0.0);
    }

    #[test]
    fn matching_ties_go_to_lower_index() {
        // centred design, so standardizing keeps the ties exact
        let d = ds(&[0.0, -1.0, 1.0, 0.0], &[1, 0, 0, 1], &[0.0, 10.0, 20.0, 4.0]);
        let coords = d.x().standardized();
        assert_eq!(
            squared_distance(coords.row(0), coords.row(1)),
            squared_distance(coords.row(0), coords.row(2))
        );
        // treated rows take row 1, control rows take row 0
        let te = [0.0 - 10.0, 0.0 - 10.0, 0.0 - 20.0, 4.0 - 10.0];
        let v = match_vte(&d, &MatchConfig::default(), None).unwrap();
        assert_eq!(v, population_variance(&te));
    }

    #[test]
    fn matching_config_errors() {
        let d = ds(&[0.0, 1.0, 2.0], &[1, 0, 0], &[0.0, 1.0, 2.0]);
        let too_many = MatchConfig { k: 2, ..Default::default() };
        assert!(match_vte(&d, &too_many, None).unwrap_err().is_input());
        let zero = MatchConfig { k: 0, ..Default::default() };
        assert!(match_vte(&d, &zero, None).unwrap_err().is_input());
        let ps = MatchConfig { metric: MatchMetric::PropensityScore, ..Default::default() };
        assert!(match_vte(&d, &ps, None).unwrap_err().is_input());
    }

    #[test]
    fn propensity_symmetric_design() {
        let d = ds(&[1.0, -1.0, 2.0, -2.0], &[1, 0, 1, 0], &[0.0; 4]);
        let m = fit_propensity(&d).unwrap();
        assert!((m.score(&[0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(m.gradient_norm <= PROPENSITY_GRAD_TOL);
    }

    #[test]
    fn propensity_monotone_in_x() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let a: Vec<u8> = (0..10).map(|i| u8::from(i >= 5)).collect();
        let d = ds(&x, &a, &[0.0; 10]);
        let m = fit_propensity(&d).unwrap();
        let s = m.scores(d.x()).unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn logistic_pieces() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
