//! Univariate and bivariate standard-normal kernels.
//!
//! The bivariate CDF follows the Drezner–Wesolowsky single-integral form with
//! Genz's Gauss–Legendre rules: 6, 12 or 20 nodes depending on |ρ|, and the
//! transformed integrand once |ρ| ≥ 0.925. Infinite arguments and |ρ| = 1 never
//! reach the quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;
/// 1/√(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Probabilities are clamped to this floor before taking logs or ratios.
pub const PROB_FLOOR: f64 = 1e-300;

/// Which side of the unit interval a quantile request fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Zero,
    One,
}

/// Which cell of the selected population vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    /// Φ₂(μ, ν; ρ) = 0
    Lower,
    /// Φ(ν) − Φ₂(μ, ν; ρ) = 0
    Upper,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("normal quantile requested at the boundary p = {}", match .0 { Boundary::Zero => "0", Boundary::One => "1" })]
    QuantileBoundary(Boundary),
    #[error("probability {0} outside [0, 1]")]
    NotAProbability(f64),
    #[error("correlation {0} is singular (|rho| = 1) or outside [-1, 1]")]
    SingularCorrelation(f64),
    #[error("degenerate cell probability: {0:?} cell vanished")]
    DegenerateCell(Cell),
}

/// Arguments of Φ₂: the two thresholds and the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvnPoint {
    pub mu: f64,
    pub nu: f64,
    pub rho: f64,
}

impl BvnPoint {
    pub fn new(mu: f64, nu: f64, rho: f64) -> Self {
        Self { mu, nu, rho }
    }

    pub fn cdf(&self) -> f64 {
        bvn_cdf(self.mu, self.nu, self.rho)
    }

    pub fn pdf(&self) -> Result<f64, KernelError> {
        bvn_pdf(self.mu, self.nu, self.rho)
    }

    pub fn partials(&self) -> Result<BvnPartials, KernelError> {
        bvn_cdf_partials(self.mu, self.nu, self.rho)
    }

    pub fn g_ratios(&self) -> Result<GRatios, KernelError> {
        g_ratios(self.mu, self.nu, self.rho)
    }
}

/// Standard normal CDF, total on the extended reals.
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// log Φ(x), accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        // Φ(x) = 1 − Φ(−x)
        return (-norm_cdf(-x)).ln_1p();
    }
    if x > -30.0 {
        return norm_cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Asymptotic expansion of the Mills ratio.
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - z * (3.0 - z * (15.0 - 105.0 * z)));
    -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
}

/// φ(x)/Φ(x), the inverse Mills ratio.
pub fn inverse_mills(x: f64) -> f64 {
    if x > -30.0 {
        return norm_pdf(x) / norm_cdf(x);
    }
    (-0.5 * x * x - LN_SQRT_2PI - log_norm_cdf(x)).exp()
}

/// Φ⁻¹(p) for p in the open unit interval.
pub fn norm_quantile(p: f64) -> Result<f64, KernelError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(KernelError::NotAProbability(p));
    }
    if p == 0.0 {
        return Err(KernelError::QuantileBoundary(Boundary::Zero));
    }
    if p == 1.0 {
        return Err(KernelError::QuantileBoundary(Boundary::One));
    }
    Ok(standard_normal().inverse_cdf(p))
}

fn standard_normal() -> Normal {
    Normal::standard()
}

// Gauss–Legendre half rules (negative nodes) with 6, 12 and 20 points.
const GL6: [(f64, f64); 3] = [
    (-0.932_469_514_203_152_2, 0.171_324_492_379_170_5),
    (-0.661_209_386_466_264_7, 0.360_761_573_048_138_4),
    (-0.238_619_186_083_197, 0.467_913_934_572_690_4),
];

const GL12: [(f64, f64); 6] = [
    (-0.981_560_634_246_719_1, 0.047_175_336_386_511_77),
    (-0.904_117_256_370_475, 0.106_939_325_995_318_3),
    (-0.769_902_674_194_305, 0.160_078_328_543_346_4),
    (-0.587_317_954_286_617_1, 0.203_167_426_723_065_9),
    (-0.367_831_498_998_180_2, 0.233_492_536_538_354_7),
    (-0.125_233_408_511_469_2, 0.249_147_045_813_402_9),
];

const GL20: [(f64, f64); 10] = [
    (-0.993_128_599_185_094_9, 0.017_614_007_139_152_12),
    (-0.963_971_927_277_913_8, 0.040_601_429_800_386_94),
    (-0.912_234_428_251_325_9, 0.062_672_048_334_109_06),
    (-0.839_116_971_822_218_8, 0.083_276_741_576_704_75),
    (-0.746_331_906_460_150_8, 0.101_930_119_817_240_4),
    (-0.636_053_680_726_515, 0.118_194_531_961_518_4),
    (-0.510_867_001_950_827_1, 0.131_688_638_449_176_6),
    (-0.373_706_088_715_419_6, 0.142_096_109_318_382_1),
    (-0.227_785_851_141_645_1, 0.149_172_986_472_603_7),
    (-0.076_526_521_133_497_33, 0.152_753_387_130_725_9),
];

fn legendre_rule(abs_rho: f64) -> &'static [(f64, f64)] {
    if abs_rho < 0.3 {
        &GL6
    } else if abs_rho < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// Upper orthant probability P(X > h, Y > k) for finite h, k and |r| < 1.
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let rule = legendre_rule(r.abs());
    let mut hk = h * k;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        let mut sum = 0.0;
        for &(x, w) in rule {
            for sign in [1.0, -1.0] {
                let sn = (asr * (sign * x + 1.0) * 0.5).sin();
                sum += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return sum * asr / (2.0 * TWO_PI) + norm_cdf(-h) * norm_cdf(-k);
    }

    let k = if r < 0.0 {
        hk = -hk;
        -k
    } else {
        k
    };
    let a_s = (1.0 - r) * (1.0 + r);
    let mut a = a_s.sqrt();
    let bs = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    let mut bvn = a
        * (-(bs / a_s + hk) * 0.5).exp()
        * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
    if hk > -160.0 {
        let b = bs.sqrt();
        bvn -= (-hk * 0.5).exp()
            * TWO_PI.sqrt()
            * norm_cdf(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a *= 0.5;
    for &(x, w) in rule {
        for sign in [-1.0, 1.0] {
            let xs = (a * (sign * x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            let asr = -(bs / xs + hk) * 0.5;
            if asr > -100.0 {
                bvn += a
                    * w
                    * asr.exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
    }
    let tail = -bvn / TWO_PI;
    if r > 0.0 {
        tail + norm_cdf(-h.max(k))
    } else {
        // here k holds the negated second threshold
        (norm_cdf(-h) - norm_cdf(-h.max(k))) - tail
    }
}

/// Φ₂(μ, ν; ρ), the joint CDF of a standard bivariate normal pair.
///
/// ρ = ±1 returns the comonotone and countermonotone limits. The result is
/// clamped into the Fréchet–Hoeffding bounds.
pub fn bvn_cdf(mu: f64, nu: f64, rho: f64) -> f64 {
    if mu.is_nan() || nu.is_nan() || rho.is_nan() {
        return f64::NAN;
    }
    if mu == f64::NEG_INFINITY || nu == f64::NEG_INFINITY {
        return 0.0;
    }
    if mu == f64::INFINITY {
        return norm_cdf(nu);
    }
    if nu == f64::INFINITY {
        return norm_cdf(mu);
    }
    let (pm, pn) = (norm_cdf(mu), norm_cdf(nu));
    let upper = pm.min(pn);
    // pm + pn − 1 can round above min(pm, pn) when one of them is near 1
    let lower = (pm + pn - 1.0).max(0.0).min(upper);
    if rho >= 1.0 {
        return upper;
    }
    if rho <= -1.0 {
        return lower;
    }
    if rho == 0.0 {
        return pm * pn;
    }
    // fixed argument order keeps the result exactly symmetric
    let (a, b) = if mu <= nu { (mu, nu) } else { (nu, mu) };
    bvn_upper(-a, -b, rho).clamp(lower, upper)
}

/// φ₂(μ, ν; ρ).
pub fn bvn_pdf(mu: f64, nu: f64, rho: f64) -> Result<f64, KernelError> {
    check_rho(rho)?;
    if mu.is_infinite() || nu.is_infinite() {
        return Ok(0.0);
    }
    let om = 1.0 - rho * rho;
    let q = mu * mu - 2.0 * rho * mu * nu + nu * nu;
    Ok((-q / (2.0 * om)).exp() / (TWO_PI * om.sqrt()))
}

fn check_rho(rho: f64) -> Result<(), KernelError> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        Err(KernelError::SingularCorrelation(rho))
    } else {
        Ok(())
    }
}

/// First partial derivatives of Φ₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvnPartials {
    pub d_mu: f64,
    pub d_nu: f64,
    pub d_rho: f64,
}

/// ∂Φ₂/∂μ = Φ((ν − ρμ)/√(1−ρ²)) φ(μ); finite ρ only.
fn d_first(a: f64, b: f64, rho: f64, scale: f64) -> f64 {
    let dens = norm_pdf(a);
    if dens == 0.0 {
        return 0.0;
    }
    if b == f64::INFINITY {
        return dens;
    }
    if b == f64::NEG_INFINITY {
        return 0.0;
    }
    norm_cdf((b - rho * a) / scale) * dens
}

pub fn bvn_cdf_partials(mu: f64, nu: f64, rho: f64) -> Result<BvnPartials, KernelError> {
    check_rho(rho)?;
    let scale = (1.0 - rho * rho).sqrt();
    Ok(BvnPartials {
        d_mu: d_first(mu, nu, rho, scale),
        d_nu: d_first(nu, mu, rho, scale),
        d_rho: bvn_pdf(mu, nu, rho)?,
    })
}

/// Second partial derivatives of Φ₂ for finite arguments and |ρ| < 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvnSecondPartials {
    pub mu_mu: f64,
    pub mu_nu: f64,
    pub nu_nu: f64,
    pub mu_rho: f64,
    pub nu_rho: f64,
    pub rho_rho: f64,
}

/// First and second derivatives together; shares one density evaluation.
pub fn bvn_derivatives(
    mu: f64,
    nu: f64,
    rho: f64,
) -> Result<(BvnPartials, BvnSecondPartials), KernelError> {
    let first = bvn_cdf_partials(mu, nu, rho)?;
    let om = 1.0 - rho * rho;
    let dens = first.d_rho;
    let q = mu * mu - 2.0 * rho * mu * nu + nu * nu;
    let second = BvnSecondPartials {
        mu_mu: -mu * first.d_mu - rho * dens,
        mu_nu: dens,
        nu_nu: -nu * first.d_nu - rho * dens,
        mu_rho: -dens * (mu - rho * nu) / om,
        nu_rho: -dens * (nu - rho * mu) / om,
        rho_rho: dens * ((rho + mu * nu) / om - rho * q / (om * om)),
    };
    Ok((first, second))
}

/// G₁(u) = φ(u) / [Φ(u)Φ(−u)].
pub fn g1(u: f64) -> f64 {
    if u.is_infinite() {
        return f64::INFINITY;
    }
    let lp = log_norm_cdf(u);
    let lq = log_norm_cdf(-u);
    (-0.5 * u * u - LN_SQRT_2PI - lp - lq).exp()
}

/// The ratio functions G₁(ν), G₂(μ, ν; ρ) and G₃(μ, ν; ρ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GRatios {
    pub g1_at: f64,
    pub g2: f64,
    pub g3: f64,
}

pub fn g_ratios(mu: f64, nu: f64, rho: f64) -> Result<GRatios, KernelError> {
    check_rho(rho)?;
    let p = bvn_cdf(mu, nu, rho);
    let q = norm_cdf(nu) - p;
    if p <= 0.0 {
        return Err(KernelError::DegenerateCell(Cell::Lower));
    }
    if q <= 0.0 {
        return Err(KernelError::DegenerateCell(Cell::Upper));
    }
    let denom = p.clamp(PROB_FLOOR, 1.0).ln() + q.clamp(PROB_FLOOR, 1.0).ln();
    let scale = (1.0 - rho * rho).sqrt();
    // log ∂_μΦ₂ = log φ(μ) + log Φ((ν − ρμ)/s)
    let log_dmu = -0.5 * mu * mu - LN_SQRT_2PI + log_norm_cdf((nu - rho * mu) / scale);
    let qf = mu * mu - 2.0 * rho * mu * nu + nu * nu;
    let log_drho = -qf / (2.0 * (1.0 - rho * rho)) - TWO_PI.ln() - scale.ln();
    Ok(GRatios {
        g1_at: g1(nu),
        g2: (log_dmu - denom).exp(),
        g3: (log_drho - denom).exp(),
    })
}
