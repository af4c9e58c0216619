//! Independent oracles for the integration tests: adaptive Gauss–Kronrod
//! quadrature for Φ and Φ₂, and central finite differences.
#![allow(dead_code)]

use std::f64::consts::PI;

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of f over [a, b] to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        // the Kronrod error estimate bottoms out near rounding level
        if err <= tol.max(8.0 * f64::EPSILON * v.abs()) || depth == 0 || (b - a).abs() < 1e-12 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(f, a, b, tol, 30)
}

pub fn phi_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

const TAIL: f64 = 40.0;

/// Φ by quadrature of the density, integrating over the shorter tail.
pub fn phi_cdf_quad(x: f64) -> f64 {
    if x <= 0.0 {
        integrate(&phi_density, -TAIL, x.max(-TAIL), 1e-18)
    } else {
        1.0 - integrate(&phi_density, x.min(TAIL), TAIL, 1e-18)
    }
}

/// Φ through the complementary error function; used inside the Φ₂ oracle.
pub fn phi_cdf_erfc(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Φ₂(h, k; ρ) = ∫_{−∞}^{h} φ(v) Φ((k − ρv)/√(1−ρ²)) dv for |ρ| < 1.
pub fn bvn_oracle(h: f64, k: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return phi_cdf_erfc(h) * phi_cdf_erfc(k);
    }
    let s = (1.0 - rho * rho).sqrt();
    let f = |v: f64| phi_density(v) * phi_cdf_erfc((k - rho * v) / s);
    let upper = h.min(TAIL);
    if upper <= -TAIL {
        return 0.0;
    }
    // split at the kink of the inner CDF so the adaptive rule sees it
    let kink = k / rho;
    if kink > -TAIL && kink < upper {
        integrate(&f, -TAIL, kink, 1e-17) + integrate(&f, kink, upper, 1e-17)
    } else {
        integrate(&f, -TAIL, upper, 1e-17)
    }
}

pub fn bvn_density(h: f64, k: f64, rho: f64) -> f64 {
    let q = 1.0 - rho * rho;
    (-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * q)).exp() / (2.0 * PI * q.sqrt())
}

/// Central difference f′(x).
pub fn fd1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector map: out[i][j] = ∂f_i/∂x_j.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            let fa = f(&a);
            let fb = f(&b);
            fa.iter().zip(&fb).map(|(p, m)| (p - m) / (2.0 * h)).collect()
        })
        .collect();
    let m = cols[0].len();
    (0..m).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// |a − b| / max(|b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Empirical CDF of `sample` at y.
pub fn ecdf(sample: &[f64], y: f64) -> f64 {
    sample.iter().filter(|&&v| v <= y).count() as f64 / sample.len() as f64
}

use selection_dr::simulate::{CovariateSource, HsmDgpConfig};

/// Heckman design with one outcome covariate and one excluded covariate:
/// σ = 1, β = (0.5, 1), π = (0.2, 1, 0.5), ρ = 0.4.
pub fn gaussian_hsm(n: usize, seed: u64) -> HsmDgpConfig {
    HsmDgpConfig {
        beta: vec![0.5, 1.0],
        sigma: 1.0,
        pi: vec![0.2, 1.0, 0.5],
        rho: 0.4,
        covariates: CovariateSource::Gaussian { outcome: 1, excluded: 1 },
        n,
        seed,
    }
}

/// Heckman design with no outcome covariates and a Bernoulli(p) instrument.
pub fn binary_hsm(n: usize, seed: u64, rho: f64) -> HsmDgpConfig {
    HsmDgpConfig {
        beta: vec![1.0],
        sigma: 0.8,
        pi: vec![-0.1, 0.9],
        rho,
        covariates: CovariateSource::BinaryInstrument { p: 0.5 },
        n,
        seed,
    }
}

pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// ∞-norm of a − b relative to the ∞-norm of b, floored.
pub fn rel_inf(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(floor);
    num / den
}

/// Richardson extrapolation of a central-difference rule: (4·D(h/2) − D(h))/3,
/// accurate to O(h⁴). The larger step keeps rounding noise of tail
/// probabilities out of the difference quotient.
pub fn richardson(d: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let (coarse, fine) = (d(h), d(0.5 * h));
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}
