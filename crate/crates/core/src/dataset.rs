use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_OUTCOME_BOUND: f64 = 1e6;

/// Observational data: covariates, binary treatment, outcome and optional
/// conditioning variables, one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    a: Vec<bool>,
    y: Vec<f64>,
    v: Option<Matrix>,
    outcome_bound: f64,
    covariate_names: Vec<String>,
    conditioning_names: Vec<String>,
}

pub(crate) fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

impl Dataset {
    pub fn new(x: Matrix, a: Vec<bool>, y: Vec<f64>, v: Option<Matrix>) -> Result<Self> {
        Dataset::with_bound(x, a, y, v, DEFAULT_OUTCOME_BOUND)
    }

    pub fn with_bound(
        x: Matrix,
        a: Vec<bool>,
        y: Vec<f64>,
        v: Option<Matrix>,
        outcome_bound: f64,
    ) -> Result<Self> {
        let covariate_names = default_names("x", x.ncols());
        let conditioning_names = v
            .as_ref()
            .map_or_else(Vec::new, |v| default_names("v", v.ncols()));
        let ds = Dataset {
            x,
            a,
            y,
            v,
            outcome_bound,
            covariate_names,
            conditioning_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_names(mut self, covariates: Vec<String>, conditioning: Vec<String>) -> Result<Self> {
        if covariates.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                got: covariates.len(),
            });
        }
        if conditioning.len() != self.v.as_ref().map_or(0, Matrix::ncols) {
            return Err(Error::DimensionMismatch {
                expected: self.v.as_ref().map_or(0, Matrix::ncols),
                got: conditioning.len(),
            });
        }
        self.covariate_names = covariates;
        self.conditioning_names = conditioning;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.x.nrows(),
            });
        }
        if self.a.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.a.len(),
            });
        }
        if let Some(v) = &self.v {
            if v.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.nrows(),
                });
            }
            if !v.is_finite() {
                return Err(Error::input("conditioning variables contain non-finite values"));
            }
        }
        if !(self.outcome_bound.is_finite() && self.outcome_bound > 0.0) {
            return Err(Error::input("outcome bound must be positive and finite"));
        }
        if !self.x.is_finite() {
            return Err(Error::input("covariates contain non-finite values"));
        }
        for (i, &y) in self.y.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::input(format!("outcome at row {i} is not finite")));
            }
            if y.abs() > self.outcome_bound {
                return Err(Error::input(format!(
                    "outcome {y} at row {i} exceeds the bound {}",
                    self.outcome_bound
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn treatment(&self) -> &[bool] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> Option<&Matrix> {
        self.v.as_ref()
    }

    pub fn outcome_bound(&self) -> f64 {
        self.outcome_bound
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn conditioning_names(&self) -> &[String] {
        &self.conditioning_names
    }

    /// Row indices of the units in arm `arm`, ascending.
    pub fn arm_indices(&self, arm: bool) -> Vec<usize> {
        self.a
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == arm).then_some(i))
            .collect()
    }

    /// `(n0, n1)`.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.a.iter().filter(|&&a| a).count();
        (self.n() - n1, n1)
    }

    pub fn arm_outcomes(&self, arm: bool) -> Vec<f64> {
        self.arm_indices(arm).into_iter().map(|i| self.y[i]).collect()
    }

    /// Fails unless both arms have at least `min` units.
    pub fn require_arms(&self, min: usize) -> Result<()> {
        let (n0, n1) = self.arm_sizes();
        if n0 < min || n1 < min {
            return Err(Error::input(format!(
                "each treatment arm needs at least {min} units, got n0={n0}, n1={n1}"
            )));
        }
        Ok(())
    }

    /// The units at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            a: indices.iter().map(|&i| self.a[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            v: self.v.as_ref().map(|v| v.select_rows(indices)),
            outcome_bound: self.outcome_bound,
            covariate_names: self.covariate_names.clone(),
            conditioning_names: self.conditioning_names.clone(),
        }
    }

    /// Same units with outcomes replaced.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Dataset> {
        let mut out = self.clone();
        out.y = y;
        out.validate()?;
        Ok(out)
    }
}

/// Plug-in variance: mean of squares about the mean, divided by n.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
