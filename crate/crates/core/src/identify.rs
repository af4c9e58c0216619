//! Local Gaussian representation: inversion of a joint CDF value into a
//! correlation, and identification of (μ(y), ρ(y)) from the observable cell
//! probabilities of a selection problem with a binary excluded covariate.
//!
//! Conventions follow the selection rule D = 1(D* ≤ 0): the observable joint
//! probability Pr(Y ≤ y, D = 1 | Z = z) equals Φ₂(μ(y), ν(z); ρ(y)) with
//! ν(z) = Φ⁻¹(Pr(D = 1 | Z = z)).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvn::{bvn_cdf, bvn_cdf_partials, norm_cdf, norm_quantile, KernelError};

/// Default tolerance for boundary equalities on population probabilities.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

const NEWTON_STEPS: usize = 50;
const RESIDUAL_TARGET: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifyError {
    #[error("malformed cell probabilities: {0}")]
    Malformed(String),
    #[error("joint probability {p} outside the Fréchet bounds [{lower}, {upper}]")]
    InfeasibleProbability { p: f64, lower: f64, upper: f64 },
    #[error("marginal probability {0} is degenerate (0 or 1)")]
    DegenerateMarginal(f64),
    #[error("case {0} is a boundary case; the interior solver only handles case 7")]
    WrongCase(u8),
    #[error("identification system did not converge (residual {residual:e})")]
    NumericFailure { residual: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Solves Φ₂(Φ⁻¹(u), Φ⁻¹(v); ρ) = p for ρ.
///
/// At the upper Fréchet bound the answer is +1, at the lower bound −1.
pub fn lgr_rho_solve(u: f64, v: f64, p: f64) -> Result<f64, IdentifyError> {
    for m in [u, v] {
        if !(m > 0.0 && m < 1.0) {
            return Err(IdentifyError::DegenerateMarginal(m));
        }
    }
    let lower = (u + v - 1.0).max(0.0);
    let upper = u.min(v);
    // Bounds are computed in floating point; inside this band the bound
    // and the input are indistinguishable.
    let slack = 4.0 * f64::EPSILON;
    if !(p >= lower - slack && p <= upper + slack) {
        return Err(IdentifyError::InfeasibleProbability { p, lower, upper });
    }
    if p >= upper - slack {
        return Ok(1.0);
    }
    if p <= lower + slack {
        return Ok(-1.0);
    }
    let a = norm_quantile(u)?;
    let b = norm_quantile(v)?;

    // Φ₂ is strictly increasing in ρ: safeguarded Newton on a shrinking bracket.
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut rho = 0.0;
    for _ in 0..200 {
        let r = bvn_cdf(a, b, rho) - p;
        if r.abs() <= 1e-15 {
            break;
        }
        if r > 0.0 {
            hi = rho;
        } else {
            lo = rho;
        }
        let slope = bvn_cdf_partials(a, b, rho)?.d_rho;
        let mut next = rho - r / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - rho).abs() <= 1e-16 {
            rho = next;
            break;
        }
        rho = next;
    }
    Ok(rho)
}

/// Observable inputs: Pr(D = 1 | Z = z) and F_{Y,D|Z}(y, 1 | z) for z ∈ {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub p_d1_z0: f64,
    pub p_d1_z1: f64,
    pub f_y_z0: f64,
    pub f_y_z1: f64,
}

impl CellProbabilities {
    pub fn new(p_d1_z0: f64, p_d1_z1: f64, f_y_z0: f64, f_y_z1: f64) -> Self {
        Self {
            p_d1_z0,
            p_d1_z1,
            f_y_z0,
            f_y_z1,
        }
    }

    /// Cells implied by an interior representation (μ, ρ) and selection indexes.
    pub fn from_lgr(mu: f64, rho: f64, nu0: f64, nu1: f64) -> Self {
        let (p0, p1) = (norm_cdf(nu0), norm_cdf(nu1));
        Self {
            p_d1_z0: p0,
            p_d1_z1: p1,
            f_y_z0: bvn_cdf(mu, nu0, rho) + (1.0 - p0),
            f_y_z1: bvn_cdf(mu, nu1, rho) + (1.0 - p1),
        }
    }

    /// Pr(Y ≤ y, D = 1 | Z = z) for z = 0, 1.
    pub fn joint(&self) -> (f64, f64) {
        (
            self.f_y_z0 - (1.0 - self.p_d1_z0),
            self.f_y_z1 - (1.0 - self.p_d1_z1),
        )
    }

    pub fn nu(&self) -> Result<(f64, f64), IdentifyError> {
        Ok((norm_quantile(self.p_d1_z0)?, norm_quantile(self.p_d1_z1)?))
    }

    /// Checks the probability ranges, relevance, and the monotonicity in z that
    /// any representation with ν(0) < ν(1) implies.
    pub fn validate(&self, tol: f64) -> Result<(), IdentifyError> {
        let Self {
            p_d1_z0: p0,
            p_d1_z1: p1,
            f_y_z0: f0,
            f_y_z1: f1,
        } = *self;
        let all = [p0, p1, f0, f1];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(IdentifyError::Malformed(format!(
                "probabilities must lie in [0, 1]: {all:?}"
            )));
        }
        if !(p0 > 0.0 && p1 < 1.0 && p1 - p0 > tol) {
            return Err(IdentifyError::Malformed(format!(
                "relevance requires 0 < Pr(D=1|Z=0) < Pr(D=1|Z=1) < 1, got {p0} and {p1}"
            )));
        }
        for (p, f, z) in [(p0, f0, 0), (p1, f1, 1)] {
            if f < 1.0 - p - tol {
                return Err(IdentifyError::Malformed(format!(
                    "F(y,1|{z}) = {f} is below Pr(D=0|Z={z}) = {}",
                    1.0 - p
                )));
            }
        }
        let (c0, c1) = self.joint();
        if c0 > c1 + tol {
            return Err(IdentifyError::Malformed(format!(
                "Pr(Y<=y, D=1|Z=0) = {c0} exceeds Pr(Y<=y, D=1|Z=1) = {c1}"
            )));
        }
        if f1 > f0 + tol {
            return Err(IdentifyError::Malformed(format!(
                "F(y,1|1) = {f1} exceeds F(y,1|0) = {f0}"
            )));
        }
        Ok(())
    }
}

/// What is known about μ(y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MuSet {
    Point(f64),
    /// [endpoint, +∞)
    AtLeast(f64),
    /// (−∞, endpoint]
    AtMost(f64),
}

impl MuSet {
    pub fn point(&self) -> Option<f64> {
        match self {
            MuSet::Point(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub case_id: u8,
    pub mu: MuSet,
    pub rho: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub mu_point_identified: bool,
    pub rho_point_identified: bool,
    /// Determinant of the Jacobian of the two-equation system, interior case only.
    pub jacobian_det: Option<f64>,
    /// Final ∞-norm residual of the system, interior case only.
    pub residual: Option<f64>,
}

/// Assigns the identification case 1–7.
///
/// Where two boundary conditions hold at once (cases 1 and 2, or 4 and 5) they
/// prescribe the same (μ, ρ); the lower case number is returned.
pub fn classify_case(c: &CellProbabilities, tol: f64) -> Result<u8, IdentifyError> {
    c.validate(tol)?;
    let (c0, c1) = c.joint();
    let (f0, f1) = (c.f_y_z0, c.f_y_z1);
    let eq = |a: f64, b: f64| (a - b).abs() <= tol;
    let case = if eq(c1, c0) && c1 > tol {
        1
    } else if f1 < 1.0 - tol && eq(f0, 1.0) {
        2
    } else if eq(f0, 1.0) && eq(f1, 1.0) {
        3
    } else if c1 > tol && eq(c0, 0.0) {
        4
    } else if eq(f1, f0) && f1 < 1.0 - tol {
        5
    } else if eq(c0, 0.0) && eq(c1, 0.0) {
        6
    } else {
        7
    };
    Ok(case)
}

fn residual(mu: f64, rho: f64, nu: (f64, f64), target: (f64, f64)) -> [f64; 2] {
    [
        bvn_cdf(mu, nu.1, rho) - target.1,
        bvn_cdf(mu, nu.0, rho) - target.0,
    ]
}

fn inf_norm(r: &[f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

/// Jacobian rows ordered (z = 1, z = 0), columns (μ, ρ).
fn jacobian(mu: f64, rho: f64, nu: (f64, f64)) -> Result<[[f64; 2]; 2], IdentifyError> {
    let j1 = bvn_cdf_partials(mu, nu.1, rho)?;
    let j0 = bvn_cdf_partials(mu, nu.0, rho)?;
    Ok([[j1.d_mu, j1.d_rho], [j0.d_mu, j0.d_rho]])
}

fn det(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

fn newton(
    start: (f64, f64),
    nu: (f64, f64),
    target: (f64, f64),
    steps: usize,
) -> Result<(f64, f64, f64), IdentifyError> {
    let (mut mu, mut rho) = start;
    let mut r = residual(mu, rho, nu, target);
    let mut norm = inf_norm(&r);
    for _ in 0..steps {
        if norm <= 1e-15 {
            break;
        }
        let j = jacobian(mu, rho, nu)?;
        let dt = det(&j);
        if !(dt.is_finite() && dt != 0.0) {
            break;
        }
        let dmu = -(j[1][1] * r[0] - j[0][1] * r[1]) / dt;
        let drho = -(-j[1][0] * r[0] + j[0][0] * r[1]) / dt;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let (m, p) = (mu + t * dmu, rho + t * drho);
            if p.abs() < 1.0 {
                let rn = residual(m, p, nu, target);
                let nn = inf_norm(&rn);
                if nn < norm {
                    mu = m;
                    rho = p;
                    r = rn;
                    norm = nn;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((mu, rho, norm))
}

/// μ solving Φ₂(μ, ν; ρ) = target, by bisection (Φ₂ is increasing in μ).
fn bisect_mu(nu: f64, rho: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bvn_cdf(mid, nu, rho) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Outer bisection in ρ; along the curve solving the z = 1 equation the z = 0
/// residual is increasing in ρ because the Jacobian determinant is positive.
fn nested_bisection(nu: (f64, f64), target: (f64, f64)) -> (f64, f64) {
    let edge = 1.0 - 1e-15;
    let (mut lo, mut hi) = (-edge, edge);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let mu = bisect_mu(nu.1, mid, target.1);
        if bvn_cdf(mu, nu.0, mid) < target.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let rho = 0.5 * (lo + hi);
    (bisect_mu(nu.1, rho, target.1), rho)
}

/// Interior solution (case 7) of the two-equation system by Newton's method
/// with step halving, falling back to nested bisection.
pub fn solve_mu_rho(c: &CellProbabilities, tol: f64) -> Result<IdentificationResult, IdentifyError> {
    let case = classify_case(c, tol)?;
    if case != 7 {
        return Err(IdentifyError::WrongCase(case));
    }
    let nu = c.nu()?;
    let target = c.joint();
    let pooled = (target.0 + target.1) / (c.p_d1_z0 + c.p_d1_z1);
    let mu0 = norm_quantile(pooled.clamp(1e-12, 1.0 - 1e-12))?;

    let (mut mu, mut rho, mut norm) = newton((mu0, 0.0), nu, target, NEWTON_STEPS)?;
    if norm > RESIDUAL_TARGET {
        let (m, r) = nested_bisection(nu, target);
        let polished = newton((m, r), nu, target, 10)?;
        mu = polished.0;
        rho = polished.1;
        norm = polished.2;
    }
    if norm > RESIDUAL_TARGET {
        return Err(IdentifyError::NumericFailure { residual: norm });
    }
    let j = jacobian(mu, rho, nu)?;
    Ok(IdentificationResult {
        case_id: 7,
        mu: MuSet::Point(mu),
        rho,
        nu0: nu.0,
        nu1: nu.1,
        mu_point_identified: true,
        rho_point_identified: true,
        jacobian_det: Some(det(&j)),
        residual: Some(norm),
    })
}

/// Full identification: boundary cases in closed form, case 7 numerically.
pub fn identify(c: &CellProbabilities, tol: f64) -> Result<IdentificationResult, IdentifyError> {
    let case = classify_case(c, tol)?;
    if case == 7 {
        return solve_mu_rho(c, tol);
    }
    let (nu0, nu1) = c.nu()?;
    let (_, c1) = c.joint();
    let (rho, mu) = match case {
        1 | 2 => (1.0, MuSet::Point(norm_quantile(c1)?)),
        3 => (1.0, MuSet::AtLeast(nu1)),
        4 | 5 => (-1.0, MuSet::Point(norm_quantile(c.f_y_z1)?)),
        6 => (-1.0, MuSet::AtMost(norm_quantile(c.f_y_z1)?)),
        _ => unreachable!("case 7 handled above"),
    };
    Ok(IdentificationResult {
        case_id: case,
        mu_point_identified: matches!(mu, MuSet::Point(_)),
        mu,
        rho,
        nu0,
        nu1,
        rho_point_identified: true,
        jacobian_det: None,
        residual: None,
    })
}
