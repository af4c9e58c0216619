//! Distribution regression with selection: parameter containers, the tanh
//! sorting link, cell probabilities and the per-observation log-likelihood.
//!
//! At threshold y the model has
//!   Pr(Y ≤ y, D = 1 | z) = Φ₂(−x′β(y), z′π; −ρ(x′δ(y)))
//! with selection D = 1(z′π + V > 0) and ρ = tanh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvn::{bvn_cdf, log_norm_cdf, norm_cdf, PROB_FLOOR};
use crate::data::{dot, ObservationSet, INTERCEPT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no excluded covariates: at least one variable must shift selection only")]
    NoExcludedCovariate,
    #[error("column {0} is both an outcome covariate and an excluded covariate")]
    RoleConflict(String),
    #[error("sorting column {0} is neither the intercept nor an outcome covariate")]
    BadSortingColumn(String),
    #[error("threshold grid must be nonempty, finite and strictly increasing")]
    BadGrid,
    #[error("design columns {found:?} do not match the specification {expected:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("parameter dimension mismatch: {0}")]
    Dimension(String),
}

/// Strictly increasing finite set of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        let ok = !values.is_empty()
            && values.iter().all(|v| v.is_finite())
            && values.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self(values))
        } else {
            Err(ModelError::BadGrid)
        }
    }

    /// Quantile indexes 0.10, 0.11, …, 0.90.
    pub fn default_indexes() -> Vec<f64> {
        quantile_indexes(0.10, 0.90, 0.01)
    }

    /// Left-inverse empirical quantiles of `sample` at `taus`, duplicates collapsed.
    pub fn from_quantiles(sample: &[f64], taus: &[f64]) -> Result<Self, ModelError> {
        if sample.is_empty() {
            return Err(ModelError::BadGrid);
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut values: Vec<f64> = taus
            .iter()
            .map(|&t| {
                let k = ((t * n as f64).ceil() as usize).clamp(1, n);
                sorted[k - 1]
            })
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `from, from + step, …` up to `to` inclusive, rounded to 12 decimals so that
/// accumulated steps do not drift.
pub fn quantile_indexes(from: f64, to: f64, step: f64) -> Vec<f64> {
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

/// Column roles and the threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome_cols: Vec<String>,
    pub excluded_cols: Vec<String>,
    pub sorting_cols: Vec<String>,
    pub grid: ThresholdGrid,
}

impl ModelSpec {
    pub fn new(
        outcome_cols: Vec<String>,
        excluded_cols: Vec<String>,
        sorting_cols: Vec<String>,
        grid: ThresholdGrid,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            outcome_cols,
            excluded_cols,
            sorting_cols,
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.excluded_cols.is_empty() {
            return Err(ModelError::NoExcludedCovariate);
        }
        if let Some(c) = self.excluded_cols.iter().find(|c| self.outcome_cols.contains(c)) {
            return Err(ModelError::RoleConflict(c.clone()));
        }
        for c in &self.sorting_cols {
            if c != INTERCEPT && !self.outcome_cols.contains(c) {
                return Err(ModelError::BadSortingColumn(c.clone()));
            }
        }
        if self.sorting_cols.is_empty() {
            return Err(ModelError::BadSortingColumn("<none>".into()));
        }
        Ok(())
    }

    /// (intercept, outcome covariates…)
    pub fn x_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.outcome_cols.iter().cloned())
            .collect()
    }

    /// (intercept, excluded covariates…, outcome covariates…)
    pub fn z_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.excluded_cols.iter().cloned())
            .chain(self.outcome_cols.iter().cloned())
            .collect()
    }

    /// Positions of the sorting columns within X.
    pub fn sorting_index(&self) -> Vec<usize> {
        let x = self.x_names();
        self.sorting_cols
            .iter()
            .map(|c| x.iter().position(|n| n == c).expect("validated"))
            .collect()
    }

    pub fn check_data(&self, data: &ObservationSet) -> Result<(), ModelError> {
        self.validate()?;
        for (expected, found) in [
            (self.x_names(), data.x().names()),
            (self.z_names(), data.z().names()),
        ] {
            if expected.as_slice() != found {
                return Err(ModelError::SchemaMismatch {
                    expected,
                    found: found.to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Coefficients at one threshold: β(y) over X and δ(y) over the sorting columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaAtY {
    pub y: f64,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl ThetaAtY {
    /// Stacked (β, δ).
    pub fn stacked(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.delta).copied().collect()
    }

    pub fn from_stacked(y: f64, theta: &[f64], k_beta: usize) -> Self {
        Self {
            y,
            beta: theta[..k_beta].to_vec(),
            delta: theta[k_beta..].to_vec(),
        }
    }

    /// Heckman selection model at threshold y: β(y) = (β − y·e₁)/σ, δ(y) = (atanh ρ, 0, …).
    pub fn from_hsm(y: f64, beta: &[f64], sigma: f64, rho: f64, k_delta: usize) -> Self {
        let mut b: Vec<f64> = beta.iter().map(|v| v / sigma).collect();
        b[0] -= y / sigma;
        let mut delta = vec![0.0; k_delta];
        delta[0] = rho.atanh();
        Self { y, beta: b, delta }
    }

    pub fn indexes(&self, x: &[f64], sorting: &[usize]) -> (f64, f64) {
        let a = dot(&self.beta, x);
        let u = sorting.iter().zip(&self.delta).map(|(&j, d)| x[j] * d).sum();
        (a, u)
    }
}

/// π together with one θ per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDRParams {
    pub pi: Vec<f64>,
    pub thetas: Vec<ThetaAtY>,
}

impl SelectionDRParams {
    pub fn grid(&self) -> Vec<f64> {
        self.thetas.iter().map(|t| t.y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoLink {
    pub rho: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn rho_link(u: f64) -> RhoLink {
    let rho = u.tanh();
    let d1 = 1.0 - rho * rho;
    RhoLink {
        rho,
        d1,
        d2: -2.0 * rho * d1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbs {
    pub p_d0: f64,
    pub p_d1_below: f64,
    pub p_d1_above: f64,
}

/// Cells from the outcome index a = x′β, sorting index u = x′δ and
/// selection index s = z′π.
pub fn cells_from_index(a: f64, u: f64, s: f64) -> CellProbs {
    let r = u.tanh();
    CellProbs {
        p_d0: norm_cdf(-s),
        p_d1_below: cell_probability(a, s, r, true),
        p_d1_above: cell_probability(a, s, r, false),
    }
}

/// Pr(Y ≤ y, D = 1) = Φ₂(−a, s; −r) or Pr(Y > y, D = 1) = Φ₂(a, s; r).
pub(crate) fn cell_probability(a: f64, s: f64, r: f64, below: bool) -> f64 {
    if below {
        bvn_cdf(-a, s, -r)
    } else {
        bvn_cdf(a, s, r)
    }
}

/// Row layout: `x` is a row of X (with intercept), `z` a row of Z, and
/// `sorting` the positions of the sorting columns in X.
pub fn cell_probs(theta: &ThetaAtY, pi: &[f64], x: &[f64], z: &[f64], sorting: &[usize]) -> CellProbs {
    let (a, u) = theta.indexes(x, sorting);
    cells_from_index(a, u, dot(pi, z))
}

/// log of the observed cell, floored at log(1e−300). `i_y` is 1(Y ≤ y) and is
/// ignored when `d` is false.
pub fn loglik_row(
    theta: &ThetaAtY,
    pi: &[f64],
    d: bool,
    i_y: bool,
    x: &[f64],
    z: &[f64],
    sorting: &[usize],
) -> f64 {
    let s = dot(pi, z);
    if !d {
        return log_norm_cdf(-s);
    }
    let (a, u) = theta.indexes(x, sorting);
    loglik_selected(a, u, s, i_y)
}

pub(crate) fn loglik_selected(a: f64, u: f64, s: f64, below: bool) -> f64 {
    let c = cells_from_index(a, u, s);
    let p = if below { c.p_d1_below } else { c.p_d1_above };
    p.max(PROB_FLOOR).ln()
}

/// Φ(−x′β(y)).
pub fn conditional_latent_cdf(theta: &ThetaAtY, x: &[f64]) -> f64 {
    norm_cdf(-dot(&theta.beta, x))
}
