//! Monte Carlo harness for the Heckman selection model: data generation,
//! replication loop with coverage bookkeeping, and the classical two-step
//! benchmark.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvn::{inverse_mills, norm_quantile};
use crate::data::{dot, Covariates, DataError, ObservationSet, INTERCEPT};
use crate::estimate::{fit_probit, fit_two_step, EstimateError, FitOptions};
use crate::inference::{uniform_bands, BootstrapPlan, InferenceError};
use crate::linalg::inverse_with_ridge;
use crate::model::{ModelError, ModelSpec, ThetaAtY, ThresholdGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid design: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("every replicate failed ({0} attempted)")]
    AllFailed(usize),
}

/// Where the covariates come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSource {
    /// Independent N(0, 1) columns x1.. in the outcome equation and z1.. excluded.
    Gaussian { outcome: usize, excluded: usize },
    /// No outcome covariates; a single excluded z1 ~ Bernoulli(p).
    BinaryInstrument { p: f64 },
    /// Synthetic labour-market design; see [`wage_design_columns`].
    WageDesign,
    /// Rows reused cyclically when n exceeds the number of rows.
    Fixed { outcome: Covariates, excluded: Covariates },
}

/// Outcome and excluded column names produced by [`CovariateSource::WageDesign`].
pub fn wage_design_columns() -> (Vec<String>, Vec<String>) {
    let outcome = ["school_16", "school_17_18", "school_19_20", "college", "school_23_plus", "married", "age_std"];
    (outcome.iter().map(|s| s.to_string()).collect(), vec!["benefit_std".to_string()])
}

// Shares of the schooling categories above "15 or less", then married.
const SCHOOL_SHARES: [f64; 5] = [0.30, 0.20, 0.04, 0.09, 0.04];
const MARRIED_SHARE: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmDgpConfig {
    /// Coefficients on X = (1, outcome covariates).
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Coefficients on Z = (1, excluded, outcome covariates).
    pub pi: Vec<f64>,
    pub rho: f64,
    pub covariates: CovariateSource,
    pub n: usize,
    pub seed: u64,
}

impl HsmDgpConfig {
    pub fn column_names(&self) -> (Vec<String>, Vec<String>) {
        match &self.covariates {
            CovariateSource::Gaussian { outcome, excluded } => (
                (1..=*outcome).map(|j| format!("x{j}")).collect(),
                (1..=*excluded).map(|j| format!("z{j}")).collect(),
            ),
            CovariateSource::BinaryInstrument { .. } => (Vec::new(), vec!["z1".to_string()]),
            CovariateSource::WageDesign => wage_design_columns(),
            CovariateSource::Fixed { outcome, excluded } => (outcome.names().to_vec(), excluded.names().to_vec()),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::BadConfig(m));
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("|rho| must be below 1, got {}", self.rho));
        }
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        let (o, e) = self.column_names();
        if self.beta.len() != o.len() + 1 {
            return bad(format!("beta has {} entries, the outcome design has {}", self.beta.len(), o.len() + 1));
        }
        if self.pi.len() != o.len() + e.len() + 1 {
            return bad(format!("pi has {} entries, the selection design has {}", self.pi.len(), o.len() + e.len() + 1));
        }
        if e.is_empty() {
            return bad("at least one excluded covariate is required".into());
        }
        match &self.covariates {
            CovariateSource::BinaryInstrument { p } if !(*p > 0.0 && *p < 1.0) => bad(format!("p must lie in (0, 1), got {p}")),
            CovariateSource::Fixed { outcome, excluded } if outcome.nrows() == 0 || outcome.nrows() != excluded.nrows() => {
                bad("fixed designs must be nonempty and have equal row counts".into())
            }
            _ => Ok(()),
        }
    }

    /// Model specification matching this design with the given sorting columns.
    pub fn model_spec(&self, sorting_cols: Vec<String>, grid: ThresholdGrid) -> Result<ModelSpec, ModelError> {
        let (o, e) = self.column_names();
        ModelSpec::new(o, e, sorting_cols, grid)
    }

    /// True coefficients at threshold y under the nesting β(y) = (β − y·e₁)/σ.
    pub fn true_theta(&self, y: f64, k_delta: usize) -> ThetaAtY {
        ThetaAtY::from_hsm(y, &self.beta, self.sigma, self.rho, k_delta)
    }
}

/// Synthetic stand-in for a women's wage sample: five schooling dummies,
/// a married dummy, standardized age, and a standardized out-of-work benefit
/// excluded from the outcome equation. Selection share is about 0.66.
pub fn wage_design_config(n: usize, seed: u64) -> HsmDgpConfig {
    HsmDgpConfig {
        // intercept, school_16, 17_18, 19_20, college, 23_plus, married, age_std
        beta: vec![2.00, 0.10, 0.20, 0.28, 0.36, 0.45, 0.08, 0.06],
        sigma: 0.50,
        // intercept, benefit_std, then the outcome columns
        pi: vec![0.45, -0.45, 0.10, 0.25, 0.35, 0.45, 0.50, -0.15, -0.10],
        rho: -0.3,
        covariates: CovariateSource::WageDesign,
        n,
        seed,
    }
}

/// One draw from the model, keeping the latent outcome and the errors.
#[derive(Debug, Clone)]
pub struct HsmSample {
    pub data: ObservationSet,
    pub latent: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn draw_covariates(src: &CovariateSource, i: usize, rng: &mut ChaCha8Rng, outcome: &mut Vec<f64>, excluded: &mut Vec<f64>) {
    match src {
        CovariateSource::Gaussian { outcome: ko, excluded: ke } => {
            for _ in 0..*ko {
                outcome.push(StandardNormal.sample(rng));
            }
            for _ in 0..*ke {
                excluded.push(StandardNormal.sample(rng));
            }
        }
        CovariateSource::BinaryInstrument { p } => {
            excluded.push(if rng.random::<f64>() < *p { 1.0 } else { 0.0 });
        }
        CovariateSource::WageDesign => {
            let r: f64 = rng.random();
            let mut acc = 1.0 - SCHOOL_SHARES.iter().sum::<f64>();
            for share in SCHOOL_SHARES {
                let hit = r >= acc && r < acc + share;
                outcome.push(if hit { 1.0 } else { 0.0 });
                acc += share;
            }
            outcome.push(if rng.random::<f64>() < MARRIED_SHARE { 1.0 } else { 0.0 });
            outcome.push(StandardNormal.sample(rng));
            excluded.push(StandardNormal.sample(rng));
        }
        CovariateSource::Fixed { outcome: o, excluded: e } => {
            let r = i % o.nrows();
            outcome.extend_from_slice(o.row(r));
            excluded.extend_from_slice(e.row(r));
        }
    }
}

/// Draws (X, Z, U, V) row by row from one ChaCha8 stream seeded by `cfg.seed`.
pub fn hsm_sample(cfg: &HsmDgpConfig) -> Result<HsmSample, SimulationError> {
    cfg.validate()?;
    let (on, en) = cfg.column_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ko, ke) = (on.len(), en.len());
    let mut ov = Vec::with_capacity(cfg.n * ko);
    let mut ev = Vec::with_capacity(cfg.n * ke);
    let (mut d, mut y, mut latent, mut uu, mut vv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let c = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut x = vec![0.0; ko + 1];
    let mut z = vec![0.0; ko + ke + 1];
    for i in 0..cfg.n {
        let (o0, e0) = (ov.len(), ev.len());
        draw_covariates(&cfg.covariates, i, &mut rng, &mut ov, &mut ev);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let v = e1;
        let u = cfg.rho * e1 + c * e2;
        x[0] = 1.0;
        x[1..].copy_from_slice(&ov[o0..]);
        z[0] = 1.0;
        z[1..=ke].copy_from_slice(&ev[e0..]);
        z[ke + 1..].copy_from_slice(&ov[o0..]);
        let ystar = dot(&cfg.beta, &x) + cfg.sigma * u;
        let sel = dot(&cfg.pi, &z) + v > 0.0;
        d.push(sel);
        y.push(sel.then_some(ystar));
        latent.push(ystar);
        uu.push(u);
        vv.push(v);
    }
    let outcome = Covariates::with_rows(on, ov, cfg.n)?;
    let excluded = Covariates::with_rows(en, ev, cfg.n)?;
    let data = ObservationSet::new(d, y, &outcome, &excluded)?;
    Ok(HsmSample { data, latent, u: uu, v: vv })
}

pub fn hsm_generate(cfg: &HsmDgpConfig) -> Result<ObservationSet, SimulationError> {
    Ok(hsm_sample(cfg)?.data)
}

/// Threshold grid at quantile indexes `taus` of the selected outcomes in one
/// large draw (n = `calibration_n`) from the design.
pub fn calibration_grid(cfg: &HsmDgpConfig, taus: &[f64], calibration_n: usize) -> Result<ThresholdGrid, SimulationError> {
    let big = HsmDgpConfig { n: calibration_n, ..cfg.clone() };
    let data = hsm_generate(&big)?;
    Ok(ThresholdGrid::from_quantiles(&data.selected_outcomes(), taus)?)
}

/// Classical two-step estimates and their generated-regressor-corrected
/// standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeckmanFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se_beta: Vec<f64>,
    pub beta_lambda: f64,
    pub se_beta_lambda: f64,
    pub sigma: f64,
    pub rho: f64,
    pub beta_over_sigma: Vec<f64>,
    pub pi: Vec<f64>,
    /// Set when the Mills ratio is nearly collinear with X.
    pub near_singular: bool,
}

impl HeckmanFit {
    /// The implied distribution-regression coefficients at threshold y.
    pub fn as_theta(&self, y: f64, k_delta: usize) -> ThetaAtY {
        ThetaAtY::from_hsm(y, &self.beta, self.sigma, self.rho.clamp(-1.0 + 1e-12, 1.0 - 1e-12), k_delta)
    }
}

pub fn heckman_two_step(data: &ObservationSet) -> Result<HeckmanFit, SimulationError> {
    let first = fit_probit(data, &FitOptions::default())?;
    let x = data.x();
    let z = data.z();
    let kx = x.ncols();
    let kz = z.ncols();
    let sel: Vec<usize> = (0..data.len()).filter(|&i| data.d()[i]).collect();
    let n1 = sel.len();
    let kk = kx + 1;
    if n1 <= kk {
        return Err(SimulationError::BadConfig(format!("{n1} selected units for {kk} regressors")));
    }

    let mut xs = DMatrix::zeros(n1, kk);
    let mut w = DMatrix::zeros(n1, kz);
    let mut yv = DVector::zeros(n1);
    let mut delta = DVector::zeros(n1);
    for (r, &i) in sel.iter().enumerate() {
        let s = dot(&first.pi_hat, z.row(i));
        let lam = inverse_mills(s);
        for j in 0..kx {
            xs[(r, j)] = x.row(i)[j];
        }
        xs[(r, kx)] = lam;
        for j in 0..kz {
            w[(r, j)] = z.row(i)[j];
        }
        yv[r] = data.y()[i];
        delta[r] = lam * (lam + s);
    }

    let xtx = xs.transpose() * &xs;
    let sv = xtx.singular_values();
    let near_singular = sv.min() <= 1e-10 * sv.max();
    if near_singular {
        log::warn!("Mills ratio nearly collinear with the outcome covariates");
    }
    let (xtx_inv, _) = inverse_with_ridge(&xtx, 1.0);
    let b = &xtx_inv * (xs.transpose() * &yv);
    let e = &yv - &xs * &b;
    let b_lam = b[kx];
    let mean_delta = delta.mean();
    let sigma2 = e.dot(&e) / n1 as f64 + b_lam * b_lam * mean_delta;
    let sigma = sigma2.sqrt();
    let rho = b_lam / sigma;

    // σ²(X*′X*)⁻¹ [X*′(I − ρ²Δ)X* + ρ²(X*′ΔW) V_π (W′ΔX*)] (X*′X*)⁻¹
    let xd = DMatrix::from_fn(n1, kk, |r, j| xs[(r, j)] * delta[r]);
    let inner_a = &xtx - rho * rho * (xs.transpose() * &xd);
    let xdw = xd.transpose() * &w;
    let info = -(first.h1() * data.len() as f64);
    let (v_pi, _) = inverse_with_ridge(&info, 1.0);
    let q = rho * rho * (&xdw * v_pi * xdw.transpose());
    let cov = sigma2 * (&xtx_inv * (inner_a + q) * &xtx_inv);
    let se: Vec<f64> = (0..kk).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let beta: Vec<f64> = b.iter().take(kx).copied().collect();
    Ok(HeckmanFit {
        names: x.names().to_vec(),
        beta_over_sigma: beta.iter().map(|v| v / sigma).collect(),
        beta,
        se_beta: se[..kx].to_vec(),
        beta_lambda: b_lam,
        se_beta_lambda: se[kx],
        sigma,
        rho,
        pi: first.pi_hat.clone(),
        near_singular,
    })
}

/// A curve whose coverage is tracked in the Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "column", rename_all = "snake_case")]
pub enum McTarget {
    /// β(y) coordinate on the named X column.
    Beta(String),
    /// ρ(y) = tanh(δ_intercept(y)); needs the intercept among the sorting columns.
    Rho,
}

impl McTarget {
    pub fn name(&self) -> String {
        match self {
            McTarget::Beta(c) => format!("beta:{c}"),
            McTarget::Rho => "rho".to_string(),
        }
    }

    fn contrast(&self, spec: &ModelSpec) -> Result<Vec<f64>, SimulationError> {
        let xn = spec.x_names();
        let kb = xn.len();
        let mut c = vec![0.0; kb + spec.sorting_cols.len()];
        let pos = match self {
            McTarget::Beta(col) => xn.iter().position(|n| n == col),
            McTarget::Rho => spec.sorting_cols.iter().position(|n| n == INTERCEPT).map(|p| kb + p),
        };
        let pos = pos.ok_or_else(|| SimulationError::BadConfig(format!("target {} is not in the model", self.name())))?;
        c[pos] = 1.0;
        Ok(c)
    }

    fn truth(&self, cfg: &HsmDgpConfig, spec: &ModelSpec, y: f64) -> f64 {
        match self {
            McTarget::Beta(col) => {
                let j = spec.x_names().iter().position(|n| n == col).expect("checked");
                cfg.true_theta(y, spec.sorting_cols.len()).beta[j]
            }
            McTarget::Rho => cfg.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub reason: String,
}

/// Per-target Monte Carlo results. `bias`, `sd`, `rmse` are absolute; the
/// `rel_*` fields divide by |true value| and are None where it is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub name: String,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub rmse: Vec<f64>,
    pub rel_bias: Vec<Option<f64>>,
    pub rel_sd: Vec<Option<f64>>,
    pub rel_rmse: Vec<Option<f64>>,
    pub mean_se: Vec<f64>,
    pub coverage_uniform: f64,
    pub coverage_pointwise: f64,
    pub avg_band_length: f64,
    pub avg_cv: f64,
    pub avg_se_over_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub completed: usize,
    pub failures: Vec<ReplicateFailure>,
    pub targets: Vec<TargetSummary>,
    /// Mean and SD over replicates of the two-step ρ̂.
    pub heckman_rho_mean: f64,
    pub heckman_rho_sd: f64,
}

impl McSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.reps as f64
    }

    pub fn target(&self, name: &str) -> Option<&TargetSummary> {
        self.targets.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub dgp: HsmDgpConfig,
    pub reps: usize,
    pub plan: BootstrapPlan,
    pub spec: ModelSpec,
    pub targets: Vec<McTarget>,
    #[serde(default)]
    pub fit: FitOptions,
}

/// Seed for replicate r: first output of stream r + 1 of ChaCha8 seeded by the master seed.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64 + 1);
    rng.next_u64()
}

struct ReplicateResult {
    // [target][threshold]
    estimate: Vec<Vec<f64>>,
    se: Vec<Vec<f64>>,
    covers_uniform: Vec<bool>,
    covers_pointwise: Vec<bool>,
    band_length: Vec<f64>,
    cv: Vec<f64>,
    heckman_rho: Option<f64>,
}

fn one_replicate(design: &McDesign, r: usize, contrasts: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<ReplicateResult, SimulationError> {
    let seed = replicate_seed(design.dgp.seed, r);
    let cfg = HsmDgpConfig { seed, ..design.dgp.clone() };
    let data = hsm_generate(&cfg)?;
    let fit = fit_two_step(&data, &design.spec, &design.fit)?;
    if !fit.skipped.is_empty() {
        return Err(SimulationError::BadConfig(format!("{} thresholds skipped", fit.skipped.len())));
    }
    if !fit.all_converged() {
        return Err(SimulationError::BadConfig("a threshold did not converge".into()));
    }
    let plan = BootstrapPlan { seed: replicate_seed(design.plan.seed, r), ..design.plan };
    let bands = uniform_bands(&fit, contrasts, &plan)?;
    let heckman_rho = heckman_two_step(&data).ok().map(|h| h.rho);

    let mut out = ReplicateResult {
        estimate: Vec::new(),
        se: Vec::new(),
        covers_uniform: Vec::new(),
        covers_pointwise: Vec::new(),
        band_length: Vec::new(),
        cv: Vec::new(),
        heckman_rho,
    };
    for ((band, target), truth) in bands.into_iter().zip(&design.targets).zip(truths) {
        let band = match target {
            McTarget::Rho => band.mapped(f64::tanh, |v| 1.0 - v.tanh().powi(2)),
            McTarget::Beta(_) => band,
        };
        let pointwise = band.center.iter().zip(&band.se).zip(truth).all(|((c, s), t)| (c - t).abs() <= 1.96 * s);
        out.covers_uniform.push(band.covers(truth));
        out.covers_pointwise.push(pointwise);
        let len = band.lower.iter().zip(&band.upper).map(|(l, u)| u - l).sum::<f64>() / band.grid.len() as f64;
        out.band_length.push(len);
        out.cv.push(band.critical_value);
        out.estimate.push(band.center);
        out.se.push(band.se);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Replicates are run in parallel and reduced in replicate order.
pub fn run_monte_carlo(design: &McDesign) -> Result<McSummary, SimulationError> {
    design.dgp.validate()?;
    design.plan.validate()?;
    design.spec.validate()?;
    if design.reps == 0 {
        return Err(SimulationError::BadConfig("reps must be at least 1".into()));
    }
    let (o, e) = design.dgp.column_names();
    if o != design.spec.outcome_cols || e != design.spec.excluded_cols {
        return Err(SimulationError::BadConfig("model columns differ from the design columns".into()));
    }
    let grid = design.spec.grid.values().to_vec();
    let contrasts = design.targets.iter().map(|t| t.contrast(&design.spec)).collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<Vec<f64>> = design
        .targets
        .iter()
        .map(|t| grid.iter().map(|&y| t.truth(&design.dgp, &design.spec, y)).collect())
        .collect();

    let results: Vec<Result<ReplicateResult, SimulationError>> = (0..design.reps)
        .into_par_iter()
        .map(|r| {
            let res = one_replicate(design, r, &contrasts, &truths);
            log::info!("replicate {r}: {}", if res.is_ok() { "ok" } else { "failed" });
            res
        })
        .collect();

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(ReplicateFailure { replicate: r, reason: e.to_string() });
            }
        }
    }
    if ok.is_empty() {
        return Err(SimulationError::AllFailed(design.reps));
    }
    let reps_ok = ok.len() as f64;

    let targets = design
        .targets
        .iter()
        .enumerate()
        .map(|(m, target)| {
            let truth = truths[m].clone();
            let mut mean_est = Vec::new();
            let mut bias = Vec::new();
            let mut sd = Vec::new();
            let mut rmse = Vec::new();
            let mut mean_se = Vec::new();
            for j in 0..grid.len() {
                let est = || ok.iter().map(|r| r.estimate[m][j]);
                let mu = mean(est());
                let var = mean(est().map(|v| (v - mu) * (v - mu)));
                let b = mu - truth[j];
                mean_est.push(mu);
                bias.push(b);
                sd.push(var.sqrt());
                rmse.push((b * b + var).sqrt());
                mean_se.push(mean(ok.iter().map(|r| r.se[m][j])));
            }
            let rel = |v: &[f64]| -> Vec<Option<f64>> {
                v.iter().zip(&truth).map(|(a, t)| (*t != 0.0).then(|| a / t.abs())).collect()
            };
            TargetSummary {
                name: target.name(),
                grid: grid.clone(),
                rel_bias: rel(&bias),
                rel_sd: rel(&sd),
                rel_rmse: rel(&rmse),
                coverage_uniform: ok.iter().filter(|r| r.covers_uniform[m]).count() as f64 / reps_ok,
                coverage_pointwise: ok.iter().filter(|r| r.covers_pointwise[m]).count() as f64 / reps_ok,
                avg_band_length: mean(ok.iter().map(|r| r.band_length[m])),
                avg_cv: mean(ok.iter().map(|r| r.cv[m])),
                avg_se_over_sd: mean(mean_se.iter().zip(&sd).map(|(s, d)| s / d)),
                truth,
                mean_estimate: mean_est,
                bias,
                sd,
                rmse,
                mean_se,
            }
        })
        .collect();

    let hr: Vec<f64> = ok.iter().filter_map(|r| r.heckman_rho).collect();
    let hm = mean(hr.iter().copied());
    let hs = mean(hr.iter().map(|v| (v - hm) * (v - hm))).sqrt();
    Ok(McSummary {
        reps: design.reps,
        completed: ok.len(),
        failures,
        targets,
        heckman_rho_mean: hm,
        heckman_rho_sd: hs,
    })
}

/// Wage-design Monte Carlo with College, Married and ρ(y) targets, an
/// 81-point grid calibrated on a 10⁵ draw, and constant-ρ sorting.
pub fn wage_design_mc(n: usize, reps: usize, b_draws: usize, seed: u64) -> Result<McDesign, SimulationError> {
    let dgp = wage_design_config(n, seed);
    let grid = calibration_grid(&dgp, &ThresholdGrid::default_indexes(), 100_000)?;
    let spec = dgp.model_spec(vec![INTERCEPT.to_string()], grid)?;
    Ok(McDesign {
        dgp,
        reps,
        plan: BootstrapPlan::new(b_draws, seed ^ 0xB007, 0.95)?,
        spec,
        targets: vec![McTarget::Beta("college".into()), McTarget::Beta("married".into()), McTarget::Rho],
        fit: FitOptions::default(),
    })
}

/// Selection probability of the intercept-only design: Φ⁻¹(p) as π₀.
pub fn intercept_for_share(p: f64) -> f64 {
    norm_quantile(p).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(rho: f64, n: usize, seed: u64) -> HsmDgpConfig {
        HsmDgpConfig {
            beta: vec![0.5, 1.0],
            sigma: 1.0,
            pi: vec![0.2, 1.0, 0.5],
            rho,
            covariates: CovariateSource::Gaussian { outcome: 1, excluded: 1 },
            n,
            seed,
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let a = hsm_sample(&gaussian(0.3, 500, 9)).unwrap();
        let b = hsm_sample(&gaussian(0.3, 500, 9)).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.data.d(), b.data.d());
        assert_eq!(a.data.z(), b.data.z());
        let c = hsm_sample(&gaussian(0.3, 500, 10)).unwrap();
        assert_ne!(a.latent, c.latent);
    }

    #[test]
    fn wage_design_shares() {
        let s = hsm_sample(&wage_design_config(40_000, 3)).unwrap();
        let x = s.data.x();
        let college = x.column(x.column_index("college").unwrap());
        let share = college.iter().sum::<f64>() / college.len() as f64;
        assert!((share - 0.09).abs() < 0.01, "{share}");
        let sel = s.data.selected_share();
        assert!((sel - 0.66).abs() < 0.04, "{sel}");
        let school: f64 = (1..=5).map(|j| x.column(j).iter().sum::<f64>()).sum::<f64>() / x.nrows() as f64;
        assert!((school - 0.67).abs() < 0.01);
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: Vec<u64> = (0..50).map(|r| replicate_seed(7, r)).collect();
        let mut t = s.clone();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 50);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = gaussian(0.3, 100, 1);
        c.rho = 1.0;
        assert!(c.validate().is_err());
        let mut c = gaussian(0.3, 100, 1);
        c.pi.pop();
        assert!(c.validate().is_err());
    }
}
