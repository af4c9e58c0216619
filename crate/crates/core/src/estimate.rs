//! Two-step estimation: probit first stage, per-threshold selection-corrected
//! distribution regression second stage, influence functions and covariances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvn::{
    bvn_derivatives, g1, inverse_mills, log_norm_cdf, norm_pdf, norm_quantile,
    PROB_FLOOR,
};
use crate::data::{dot, Covariates, ObservationSet};
use crate::linalg::{dependent_columns, from_rows, inverse_with_ridge, solve_damped, to_rows};
use crate::model::{cell_probability, loglik_selected, ModelError, ModelSpec, SelectionDRParams, ThetaAtY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("singular design: {columns:?} are linear combinations of earlier columns")]
    SingularDesign { columns: Vec<String> },
    #[error("threshold {y}: {reason}")]
    DegenerateThreshold { y: f64, reason: String },
    #[error(
        "threshold {}: no convergence after {} iterations (gradient {:e})",
        .diagnostics.y, .diagnostics.iterations, .diagnostics.grad_norm
    )]
    NumericFailure {
        theta: Box<ThetaAtY>,
        diagnostics: Box<ThresholdDiagnostics>,
    },
    #[error("first stage did not converge (gradient {grad_norm:e})")]
    FirstStageFailure { grad_norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub probit_tol: f64,
    pub probit_max_iter: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Every coordinate of θ is kept in [−bound, bound].
    pub bound: f64,
    /// Length of the warm-start chains; each chain starts cold.
    pub block_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            probit_tol: 1e-10,
            probit_max_iter: 100,
            grad_tol: 1e-6,
            max_iter: 200,
            max_halvings: 30,
            bound: 30.0,
            block_size: 8,
        }
    }
}

// ---------------------------------------------------------------------------
// probit

#[derive(Debug, Clone)]
struct ProbitResult {
    coef: Vec<f64>,
    loglik: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Neumaier-compensated running sum, so that objective values near an
/// optimum are not swamped by accumulation error.
#[derive(Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Accept rule shared by both stages: an ascent step, or a full step whose
/// objective change is within rounding and which shrinks the gradient.
fn acceptable(lc: f64, ll: f64, full_step: bool, grad_shrinks: impl FnOnce() -> bool) -> bool {
    if !lc.is_finite() {
        return false;
    }
    let rounding = 8.0 * f64::EPSILON * ll.abs().max(1.0);
    lc >= ll || (full_step && lc >= ll - rounding && grad_shrinks())
}

fn probit_eval(resp: &[bool], design: &Covariates, rows: &[usize], coef: &[f64], deriv: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = design.ncols();
    let m = rows.len() as f64;
    let mut ll = Compensated::default();
    let mut g = DVector::zeros(k);
    let mut h = DMatrix::zeros(k, k);
    for &i in rows {
        let z = design.row(i);
        let s = dot(coef, z);
        let (l, gs, hs) = if resp[i] {
            let lam = inverse_mills(s);
            (log_norm_cdf(s), lam, -lam * (s + lam))
        } else {
            let lam = inverse_mills(-s);
            (log_norm_cdf(-s), -lam, -lam * (lam - s))
        };
        ll.add(l);
        if deriv {
            for a in 0..k {
                g[a] += gs * z[a];
                for b in 0..=a {
                    h[(a, b)] += hs * z[a] * z[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    (ll.value() / m, g / m, h / m)
}

fn probit_newton(
    resp: &[bool],
    design: &Covariates,
    rows: &[usize],
    tol: f64,
    max_iter: usize,
) -> ProbitResult {
    let k = design.ncols();
    let share = rows.iter().filter(|&&i| resp[i]).count() as f64 / rows.len() as f64;
    let mut coef = vec![0.0; k];
    coef[0] = norm_quantile(share.clamp(1e-6, 1.0 - 1e-6)).unwrap_or(0.0);
    let (mut ll, mut g, mut h) = probit_eval(resp, design, rows, &coef, true);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        if g.amax() <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (dir, _) = solve_damped(&(-&h), &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = coef.iter().zip(dir.iter()).map(|(c, d)| c + t * d).collect();
            let (lc, gc, _) = probit_eval(resp, design, rows, &cand, t == 1.0);
            if acceptable(lc, ll, t == 1.0, || gc.amax() < g.amax()) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else { break };
        coef = cand;
        (ll, g, h) = probit_eval(resp, design, rows, &coef, true);
    }
    converged |= g.amax() <= tol;
    ProbitResult {
        coef,
        loglik: ll,
        grad_norm: g.amax(),
        iterations,
        converged,
    }
}

/// First-stage probit of D on Z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageFit {
    pub pi_hat: Vec<f64>,
    /// −n⁻¹ Σ G₁(z′π̂) φ(z′π̂) z z′
    pub h1_hat: Vec<Vec<f64>>,
    pub loglik: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some fitted selection probability is numerically 0 or 1.
    pub separation: bool,
    /// S₁ᵢ(π̂), n × k_z row-major.
    #[serde(skip)]
    pub score_rows: Vec<f64>,
}

impl FirstStageFit {
    pub fn k(&self) -> usize {
        self.pi_hat.len()
    }

    pub fn score_row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.score_rows[i * k..(i + 1) * k]
    }

    pub fn h1(&self) -> DMatrix<f64> {
        from_rows(&self.h1_hat)
    }
}

/// Probit of D on Z by Newton's method.
pub fn fit_probit(data: &ObservationSet, opts: &FitOptions) -> Result<FirstStageFit, EstimateError> {
    let z = data.z();
    let n = data.len();
    let k = z.ncols();
    let mut gram = DMatrix::zeros(k, k);
    for row in z.rows() {
        for a in 0..k {
            for b in 0..k {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let dep = dependent_columns(&(gram / n as f64), 1e-10);
    if !dep.is_empty() {
        return Err(EstimateError::SingularDesign {
            columns: dep.iter().map(|&j| z.names()[j].clone()).collect(),
        });
    }
    let rows: Vec<usize> = (0..n).collect();
    let fit = probit_newton(data.d(), z, &rows, opts.probit_tol, opts.probit_max_iter);

    let mut h1 = DMatrix::zeros(k, k);
    let mut scores = Vec::with_capacity(n * k);
    let mut separation = false;
    for i in 0..n {
        let zi = z.row(i);
        let s = dot(&fit.coef, zi);
        if s.abs() > 8.0 {
            separation = true;
        }
        let w = g1(s) * norm_pdf(s);
        for a in 0..k {
            for b in 0..k {
                h1[(a, b)] -= w * zi[a] * zi[b];
            }
        }
        let gs = if data.d()[i] { inverse_mills(s) } else { -inverse_mills(-s) };
        scores.extend(zi.iter().map(|v| gs * v));
    }
    if separation {
        log::warn!("first stage: fitted selection probabilities reach 0 or 1 (possible separation)");
    }
    if !fit.converged {
        return Err(EstimateError::FirstStageFailure {
            grad_norm: fit.grad_norm,
        });
    }
    Ok(FirstStageFit {
        pi_hat: fit.coef,
        h1_hat: to_rows(&(h1 / n as f64)),
        loglik: fit.loglik,
        grad_norm: fit.grad_norm,
        converged: fit.converged,
        iterations: fit.iterations,
        separation,
        score_rows: scores,
    })
}

// ---------------------------------------------------------------------------
// second stage

/// Log cell probability and its derivatives in the indexes a = x′β,
/// u = x′δ and s = z′π.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellDerivatives {
    pub ll: f64,
    pub a: f64,
    pub u: f64,
    pub s: f64,
    pub aa: f64,
    pub au: f64,
    pub uu: f64,
    pub as_: f64,
    pub us: f64,
    pub ss: f64,
    /// The cell fell below the probability floor; derivatives are zero.
    pub clamped: bool,
}

pub fn cell_derivatives(a: f64, u: f64, s: f64, below: bool) -> CellDerivatives {
    let tanh = u.tanh();
    let r = tanh.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    // below: Φ₂(−a, s; −r); above: Φ₂(a, s; r), evaluated directly so a small
    // upper cell is not lost to cancellation against Φ(s)
    let sg = if below { -1.0 } else { 1.0 };
    let c = cell_probability(a, s, r, below);
    if !(c > PROB_FLOOR) {
        return CellDerivatives {
            ll: PROB_FLOOR.ln(),
            clamped: true,
            ..Default::default()
        };
    }
    let (f, h) = bvn_derivatives(sg * a, s, sg * r).expect("correlation kept inside (-1, 1)");
    let r1 = 1.0 - tanh * tanh;
    let r2 = -2.0 * tanh * r1;

    let p_a = sg * f.d_mu;
    let p_s = f.d_nu;
    let p_r = sg * f.d_rho;
    let p_u = p_r * r1;
    let p_aa = h.mu_mu;
    let p_as = sg * h.mu_nu;
    let p_au = h.mu_rho * r1;
    let p_ss = h.nu_nu;
    let p_su = sg * h.nu_rho * r1;
    let p_uu = h.rho_rho * r1 * r1 + p_r * r2;

    let ca = p_a / c;
    let cu = p_u / c;
    let cs = p_s / c;
    CellDerivatives {
        ll: c.ln(),
        a: ca,
        u: cu,
        s: cs,
        aa: p_aa / c - ca * ca,
        au: p_au / c - ca * cu,
        uu: p_uu / c - cu * cu,
        as_: p_as / c - ca * cs,
        us: p_su / c - cu * cs,
        ss: p_ss / c - cs * cs,
        clamped: false,
    }
}

struct Evaluation {
    ll: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    cross: Option<DMatrix<f64>>,
    clamped: usize,
}

/// Second-stage objective L₂(θ, π̂) at a fixed threshold.
struct SecondStage<'a> {
    x: &'a Covariates,
    z: &'a Covariates,
    sorting: &'a [usize],
    s: &'a [f64],
    rows: Vec<usize>,
    below: Vec<bool>,
    n: usize,
    kb: usize,
    kd: usize,
}

impl<'a> SecondStage<'a> {
    fn new(data: &'a ObservationSet, s: &'a [f64], sorting: &'a [usize], y: f64) -> Self {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.d()[i]).collect();
        let below = rows.iter().map(|&i| data.y()[i] <= y).collect();
        Self {
            x: data.x(),
            z: data.z(),
            sorting,
            s,
            rows,
            below,
            n: data.len(),
            kb: data.x().ncols(),
            kd: sorting.len(),
        }
    }

    fn k(&self) -> usize {
        self.kb + self.kd
    }

    fn indexes(&self, i: usize, theta: &[f64]) -> (f64, f64) {
        let x = self.x.row(i);
        let a = dot(&theta[..self.kb], x);
        let u = self.sorting.iter().zip(&theta[self.kb..]).map(|(&j, d)| x[j] * d).sum();
        (a, u)
    }

    fn stacked_row(&self, i: usize, buf: &mut [f64]) {
        let x = self.x.row(i);
        buf[..self.kb].copy_from_slice(x);
        for (slot, &j) in buf[self.kb..].iter_mut().zip(self.sorting) {
            *slot = x[j];
        }
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        let mut total = Compensated::default();
        for (&i, &b) in self.rows.iter().zip(&self.below) {
            let (a, u) = self.indexes(i, theta);
            total.add(loglik_selected(a, u, self.s[i], b));
        }
        total.value() / self.n as f64
    }

    fn evaluate(&self, theta: &[f64], with_cross: bool) -> Evaluation {
        let k = self.k();
        let kz = self.z.ncols();
        let mut ll = Compensated::default();
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        let mut cross = with_cross.then(|| DMatrix::zeros(k, kz));
        let mut clamped = 0;
        let mut g = vec![0.0; k];
        let mut w1 = vec![0.0; k];
        for (&i, &b) in self.rows.iter().zip(&self.below) {
            let (a, u) = self.indexes(i, theta);
            let c = cell_derivatives(a, u, self.s[i], b);
            ll.add(c.ll);
            if c.clamped {
                clamped += 1;
                continue;
            }
            self.stacked_row(i, &mut g);
            for p in 0..k {
                let in_beta_p = p < self.kb;
                w1[p] = if in_beta_p { c.a } else { c.u };
                grad[p] += w1[p] * g[p];
                for q in 0..=p {
                    let w = match (in_beta_p, q < self.kb) {
                        (true, true) => c.aa,
                        (false, false) => c.uu,
                        _ => c.au,
                    };
                    hess[(p, q)] += w * g[p] * g[q];
                }
            }
            if let Some(j) = cross.as_mut() {
                let z = self.z.row(i);
                for p in 0..k {
                    let w = if p < self.kb { c.as_ } else { c.us };
                    for (m, zm) in z.iter().enumerate() {
                        j[(p, m)] += w * g[p] * zm;
                    }
                }
            }
        }
        for p in 0..k {
            for q in 0..p {
                hess[(q, p)] = hess[(p, q)];
            }
        }
        let n = self.n as f64;
        Evaluation {
            ll: ll.value() / n,
            grad: grad / n,
            hess: hess / n,
            cross: cross.map(|j| j / n),
            clamped,
        }
    }

    /// Per-unit scores, n × k row-major; zero for unselected units.
    fn score_rows(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; self.n * k];
        let mut g = vec![0.0; k];
        for (&i, &b) in self.rows.iter().zip(&self.below) {
            let (a, u) = self.indexes(i, theta);
            let c = cell_derivatives(a, u, self.s[i], b);
            if c.clamped {
                continue;
            }
            self.stacked_row(i, &mut g);
            let row = &mut out[i * k..(i + 1) * k];
            for p in 0..k {
                row[p] = if p < self.kb { c.a } else { c.u } * g[p];
            }
        }
        out
    }
}

fn project(theta: &mut [f64], bound: f64) {
    for v in theta.iter_mut() {
        *v = v.clamp(-bound, bound);
    }
}

fn projected_grad_norm(theta: &[f64], grad: &DVector<f64>, bound: f64) -> f64 {
    theta
        .iter()
        .zip(grad.iter())
        .map(|(&t, &g)| {
            if (t >= bound && g > 0.0) || (t <= -bound && g < 0.0) {
                0.0
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDiagnostics {
    pub y: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loglik: f64,
    pub converged: bool,
    /// Some coordinate sits on the parameter box.
    pub boundary: bool,
    /// Newton steps that needed a Levenberg shift.
    pub damped_steps: usize,
    /// Selected units whose cell probability hit the floor.
    pub clamped_rows: usize,
    /// The Hessian needed a ridge before inversion.
    pub ridge: bool,
    pub warm_start: bool,
}

impl<'a> SecondStage<'a> {
    fn step(&self, theta: &[f64], dir: &[f64], ll0: f64, g0: f64, max_halvings: usize, bound: f64) -> Option<(Vec<f64>, f64)> {
        let mut t = 1.0;
        for _ in 0..=max_halvings {
            let mut cand: Vec<f64> = theta.iter().zip(dir).map(|(a, b)| a + t * b).collect();
            project(&mut cand, bound);
            let lc = self.loglik(&cand);
            let shrinks = || projected_grad_norm(&cand, &self.evaluate(&cand, false).grad, bound) < g0;
            if acceptable(lc, ll0, t == 1.0, shrinks) {
                return Some((cand, lc));
            }
            t *= 0.5;
        }
        None
    }

    fn maximize(&self, start: Vec<f64>, y: f64, warm: bool, opts: &FitOptions) -> (Vec<f64>, ThresholdDiagnostics) {
        let mut theta = start;
        project(&mut theta, opts.bound);
        let mut ev = self.evaluate(&theta, false);
        let mut iterations = 0;
        let mut damped_steps = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            if projected_grad_norm(&theta, &ev.grad, opts.bound) <= opts.grad_tol {
                converged = true;
                break;
            }
            iterations += 1;
            let (dir, lambda) = solve_damped(&(-&ev.hess), &ev.grad);
            if lambda > 0.0 {
                damped_steps += 1;
            }
            let dir: Vec<f64> = dir.iter().copied().collect();
            let g0 = projected_grad_norm(&theta, &ev.grad, opts.bound);
            let mut next = self.step(&theta, &dir, ev.ll, g0, opts.max_halvings, opts.bound);
            if next.is_none() {
                let gmax = ev.grad.amax().max(1e-300);
                let sd: Vec<f64> = ev.grad.iter().map(|g| g / gmax).collect();
                next = self.step(&theta, &sd, ev.ll, g0, opts.max_halvings, opts.bound);
            }
            let Some((cand, _)) = next else { break };
            let moved = cand.iter().zip(&theta).any(|(a, b)| a != b);
            theta = cand;
            ev = self.evaluate(&theta, false);
            if !moved {
                break;
            }
        }
        converged |= projected_grad_norm(&theta, &ev.grad, opts.bound) <= opts.grad_tol;
        if converged {
            // polish: plain Newton steps kept only while they help
            for _ in 0..2 {
                let (dir, _) = solve_damped(&(-&ev.hess), &ev.grad);
                let mut cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, b)| a + b).collect();
                project(&mut cand, opts.bound);
                let ec = self.evaluate(&cand, false);
                let shrinks = || {
                    projected_grad_norm(&cand, &ec.grad, opts.bound) < projected_grad_norm(&theta, &ev.grad, opts.bound)
                };
                if !(acceptable(ec.ll, ev.ll, true, shrinks) && shrinks()) {
                    break;
                }
                theta = cand;
                ev = ec;
            }
        }
        let diag = ThresholdDiagnostics {
            y,
            iterations,
            grad_norm: projected_grad_norm(&theta, &ev.grad, opts.bound),
            loglik: ev.ll,
            converged,
            boundary: theta.iter().any(|v| v.abs() >= opts.bound),
            damped_steps,
            clamped_rows: ev.clamped,
            ridge: false,
            warm_start: warm,
        };
        (theta, diag)
    }
}

fn selection_index(first: &FirstStageFit, data: &ObservationSet) -> Vec<f64> {
    data.z().rows().map(|z| dot(&first.pi_hat, z)).collect()
}

fn cold_start(stage: &SecondStage<'_>, data: &ObservationSet, bound: f64) -> Vec<f64> {
    // probit of 1(Y > y) on X among the selected: Φ(x′β) ≈ Pr(Y > y | x)
    let resp: Vec<bool> = {
        let mut r = vec![false; data.len()];
        for (&i, &b) in stage.rows.iter().zip(&stage.below) {
            r[i] = !b;
        }
        r
    };
    let fit = probit_newton(&resp, data.x(), &stage.rows, 1e-8, 50);
    let mut theta = fit.coef;
    theta.resize(stage.k(), 0.0);
    project(&mut theta, bound);
    theta
}

fn check_cells(stage: &SecondStage<'_>, y: f64) -> Result<(), EstimateError> {
    let below = stage.below.iter().filter(|&&b| b).count();
    if below == 0 || below == stage.below.len() {
        let side = if below == 0 { "above" } else { "at or below" };
        return Err(EstimateError::DegenerateThreshold {
            y,
            reason: format!("every selected outcome lies {side} the threshold"),
        });
    }
    Ok(())
}

/// Second-stage maximum likelihood at one threshold.
///
/// Non-convergence is returned as [`EstimateError::NumericFailure`] carrying
/// the last iterate.
pub fn fit_dr_at_threshold(
    data: &ObservationSet,
    spec: &ModelSpec,
    first: &FirstStageFit,
    y: f64,
    warm: Option<&ThetaAtY>,
    opts: &FitOptions,
) -> Result<(ThetaAtY, ThresholdDiagnostics), EstimateError> {
    spec.check_data(data)?;
    let s = selection_index(first, data);
    let sorting = spec.sorting_index();
    fit_one(data, &s, &sorting, y, warm, opts)
}

fn fit_one(
    data: &ObservationSet,
    s: &[f64],
    sorting: &[usize],
    y: f64,
    warm: Option<&ThetaAtY>,
    opts: &FitOptions,
) -> Result<(ThetaAtY, ThresholdDiagnostics), EstimateError> {
    let stage = SecondStage::new(data, s, sorting, y);
    check_cells(&stage, y)?;
    let start = match warm {
        Some(t) => t.stacked(),
        None => cold_start(&stage, data, opts.bound),
    };
    let (theta, diag) = stage.maximize(start, y, warm.is_some(), opts);
    let theta = ThetaAtY::from_stacked(y, &theta, stage.kb);
    if diag.converged {
        Ok((theta, diag))
    } else {
        Err(EstimateError::NumericFailure {
            theta: Box::new(theta),
            diagnostics: Box::new(diag),
        })
    }
}

/// Second-stage scores and derivative blocks at (θ, π).
#[derive(Debug, Clone)]
pub struct ScoreBlocks {
    /// n × k_θ row-major.
    pub s2_rows: Vec<f64>,
    /// ∂²L₂/∂θ∂θ′
    pub h2: DMatrix<f64>,
    /// ∂²L₂/∂θ∂π′
    pub j21: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub clamped_rows: usize,
}

pub fn scores_and_blocks(theta: &ThetaAtY, pi: &[f64], data: &ObservationSet, spec: &ModelSpec) -> ScoreBlocks {
    let s: Vec<f64> = data.z().rows().map(|z| dot(pi, z)).collect();
    let sorting = spec.sorting_index();
    let stage = SecondStage::new(data, &s, &sorting, theta.y);
    blocks_for(&stage, &theta.stacked())
}

fn blocks_for(stage: &SecondStage<'_>, theta: &[f64]) -> ScoreBlocks {
    let ev = stage.evaluate(theta, true);
    ScoreBlocks {
        s2_rows: stage.score_rows(theta),
        h2: ev.hess,
        j21: ev.cross.expect("requested"),
        grad: ev.grad,
        clamped_rows: ev.clamped,
    }
}

/// ψᵢ = −H₂⁻¹(S₂ᵢ − J₂₁H₁⁻¹S₁ᵢ), n × k_θ row-major; the flag reports a ridge on H₂.
pub fn influence_rows(blocks: &ScoreBlocks, first: &FirstStageFit) -> (Vec<f64>, bool) {
    let (h1_inv, _) = inverse_with_ridge(&first.h1(), -1.0);
    influence_with(blocks, first, &h1_inv)
}

fn influence_with(blocks: &ScoreBlocks, first: &FirstStageFit, h1_inv: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let k = blocks.h2.nrows();
    let kz = first.k();
    let n = blocks.s2_rows.len() / k;
    let (h2_inv, ridged) = inverse_with_ridge(&blocks.h2, -1.0);
    if ridged {
        log::warn!("near-singular second-stage Hessian; ridge applied");
    }
    let b = &blocks.j21 * h1_inv;
    let mut out = vec![0.0; n * k];
    let mut v = DVector::zeros(k);
    for i in 0..n {
        let s2 = &blocks.s2_rows[i * k..(i + 1) * k];
        let s1 = first.score_row(i);
        for p in 0..k {
            let mut acc = s2[p];
            for m in 0..kz {
                acc -= b[(p, m)] * s1[m];
            }
            v[p] = acc;
        }
        let psi = -(&h2_inv * &v);
        out[i * k..(i + 1) * k].copy_from_slice(psi.as_slice());
    }
    (out, ridged)
}

/// Estimates at one kept threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub theta: ThetaAtY,
    pub diagnostics: ThresholdDiagnostics,
    /// Influence rows, n × k_θ row-major.
    #[serde(skip)]
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedThreshold {
    pub y: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDRFit {
    pub spec: ModelSpec,
    pub n: usize,
    pub first: FirstStageFit,
    pub thresholds: Vec<ThresholdFit>,
    pub skipped: Vec<SkippedThreshold>,
}

impl SelectionDRFit {
    pub fn k_theta(&self) -> usize {
        self.spec.outcome_cols.len() + 1 + self.spec.sorting_cols.len()
    }

    /// Names of the stacked coefficients, `beta:<col>` then `delta:<col>`.
    pub fn coefficient_names(&self) -> Vec<String> {
        self.spec
            .x_names()
            .iter()
            .map(|c| format!("beta:{c}"))
            .chain(self.spec.sorting_cols.iter().map(|c| format!("delta:{c}")))
            .collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.thresholds.iter().map(|t| t.theta.y).collect()
    }

    pub fn params(&self) -> SelectionDRParams {
        SelectionDRParams {
            pi: self.first.pi_hat.clone(),
            thetas: self.thresholds.iter().map(|t| t.theta.clone()).collect(),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.first.converged && self.thresholds.iter().all(|t| t.diagnostics.converged)
    }

    pub fn psi_row(&self, j: usize, i: usize) -> &[f64] {
        let k = self.k_theta();
        &self.thresholds[j].psi[i * k..(i + 1) * k]
    }

    pub fn threshold_index(&self, y: f64) -> Option<usize> {
        self.thresholds.iter().position(|t| t.theta.y == y)
    }

    /// n⁻² Σᵢ ψᵢ(y_j) ψᵢ(y_k)′
    pub fn covariance_at(&self, j: usize, k: usize) -> DMatrix<f64> {
        let kt = self.k_theta();
        let mut out = DMatrix::zeros(kt, kt);
        for i in 0..self.n {
            let a = self.psi_row(j, i);
            let b = self.psi_row(k, i);
            for p in 0..kt {
                for q in 0..kt {
                    out[(p, q)] += a[p] * b[q];
                }
            }
        }
        out / (self.n as f64 * self.n as f64)
    }

    pub fn standard_errors(&self, j: usize) -> Vec<f64> {
        self.covariance_at(j, j).diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

enum Outcome {
    Kept(ThetaAtY, ThresholdDiagnostics),
    Skipped(SkippedThreshold),
}

/// Probit first stage, then the second stage across the grid.
///
/// The grid is cut into contiguous blocks of `opts.block_size` thresholds;
/// blocks run concurrently, each warm-starting from its previous threshold.
pub fn fit_two_step(data: &ObservationSet, spec: &ModelSpec, opts: &FitOptions) -> Result<SelectionDRFit, EstimateError> {
    spec.check_data(data)?;
    let first = fit_probit(data, opts)?;
    let s = selection_index(&first, data);
    let sorting = spec.sorting_index();
    let grid = spec.grid.values();

    let blocks: Vec<&[f64]> = grid.chunks(opts.block_size.max(1)).collect();
    let outcomes: Vec<Vec<Outcome>> = blocks
        .par_iter()
        .map(|block| {
            let mut prev: Option<ThetaAtY> = None;
            block
                .iter()
                .map(|&y| match fit_one(data, &s, &sorting, y, prev.as_ref(), opts) {
                    Ok((theta, diag)) => {
                        prev = Some(theta.clone());
                        Outcome::Kept(theta, diag)
                    }
                    Err(EstimateError::NumericFailure { theta, diagnostics }) => {
                        log::warn!("threshold {y}: second stage did not converge");
                        prev = None;
                        Outcome::Kept(*theta, *diagnostics)
                    }
                    Err(e) => {
                        prev = None;
                        Outcome::Skipped(SkippedThreshold { y, reason: e.to_string() })
                    }
                })
                .collect()
        })
        .collect();

    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Outcome::Kept(t, d) => kept.push((t, d)),
            Outcome::Skipped(s) => {
                log::warn!("threshold {} skipped: {}", s.y, s.reason);
                skipped.push(s)
            }
        }
    }

    let (h1_inv, _) = inverse_with_ridge(&first.h1(), -1.0);
    let thresholds = kept
        .into_par_iter()
        .map(|(theta, mut diagnostics)| {
            let stage = SecondStage::new(data, &s, &sorting, theta.y);
            let blocks = blocks_for(&stage, &theta.stacked());
            let (psi, ridged) = influence_with(&blocks, &first, &h1_inv);
            diagnostics.ridge = ridged;
            ThresholdFit {
                theta,
                diagnostics,
                psi,
            }
        })
        .collect();

    Ok(SelectionDRFit {
        spec: spec.clone(),
        n: data.len(),
        first,
        thresholds,
        skipped,
    })
}
