//! Multiplier bootstrap: perturbed coefficient processes, sup-t critical
//! values, uniform bands for linear contrasts and plug-in functionals, and
//! quantile bands by inverting distribution bands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::{
    counterfactual_latent, counterfactual_observed, four_way_chain, quantile_of, rearrange,
    two_way_chain, Component, CounterfactualError, CurveBand, DecompositionReport,
    DistributionCurve, GroupInputs, QuantileStatus,
};
use crate::data::ObservationSet;
use crate::estimate::SelectionDRFit;
use crate::linalg::inverse_with_ridge;
use crate::model::{SelectionDRParams, ThetaAtY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid bootstrap plan: {0}")]
    BadPlan(String),
    #[error("every standard error is zero; no band can be formed")]
    NoVariation,
    #[error("contrast has length {got}, expected {expected}")]
    ContrastLength { got: usize, expected: usize },
    #[error("fit carries no influence functions")]
    MissingInfluence,
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub b_draws: usize,
    pub seed: u64,
    pub band_level: f64,
}

impl BootstrapPlan {
    pub fn new(b_draws: usize, seed: u64, band_level: f64) -> Result<Self, InferenceError> {
        let plan = Self {
            b_draws,
            seed,
            band_level,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.b_draws == 0 {
            return Err(InferenceError::BadPlan("need at least one draw".into()));
        }
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(InferenceError::BadPlan(format!("level {} outside (0, 1)", self.band_level)));
        }
        Ok(())
    }
}

/// Centered N(0, 1) multipliers. Draw `b_index` uses its own ChaCha stream of
/// the generator seeded by `seed`, so the vector does not depend on which
/// other draws are computed or in what order.
pub fn multiplier_weights(n: usize, b_index: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b_index as u64);
    let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    for v in &mut w {
        *v -= mean;
    }
    w
}

/// Seed for group `g` in multi-group functionals; group 0 keeps the plan seed.
pub fn group_seed(seed: u64, g: usize) -> u64 {
    seed ^ (g as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Order statistic at index ⌈pB⌉ of the sup statistics.
pub fn critical_value(mut stats: Vec<f64>, level: f64) -> f64 {
    stats.sort_by(f64::total_cmp);
    let b = stats.len();
    let k = ((level * b as f64).ceil() as usize).clamp(1, b);
    stats[k - 1]
}

/// θ̂_y + n⁻¹ Σᵢ ωᵢ ψ̂ᵢ(y) at every kept threshold.
pub fn bootstrap_theta(fit: &SelectionDRFit, weights: &[f64]) -> Vec<ThetaAtY> {
    let k = fit.k_theta();
    let kb = fit.spec.outcome_cols.len() + 1;
    let n = fit.n as f64;
    fit.thresholds
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mut theta = t.theta.stacked();
            for (i, w) in weights.iter().enumerate() {
                let psi = fit.psi_row(j, i);
                for p in 0..k {
                    theta[p] += w * psi[p] / n;
                }
            }
            ThetaAtY::from_stacked(t.theta.y, &theta, kb)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBand {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub se: Vec<f64>,
    pub half_width: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub critical_value: f64,
    pub level: f64,
    pub b_draws: usize,
    pub seed: u64,
    /// Thresholds dropped from the sup because their standard error is zero.
    pub excluded: Vec<f64>,
}

impl UniformBand {
    /// Band for g(c′θ) under an increasing map g, with delta-method SEs.
    pub fn mapped(&self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        Self {
            center: self.center.iter().map(|&v| g(v)).collect(),
            se: self.center.iter().zip(&self.se).map(|(&c, s)| dg(c) * s).collect(),
            lower: self.lower.iter().map(|&v| g(v)).collect(),
            upper: self.upper.iter().map(|&v| g(v)).collect(),
            half_width: self.lower.iter().zip(&self.upper).map(|(&l, &u)| 0.5 * (g(u) - g(l))).collect(),
            ..self.clone()
        }
    }

    pub fn covers(&self, truth: &[f64]) -> bool {
        truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| l <= t && t <= u)
    }
}

/// Uniform bands for several contrasts from the same bootstrap draws.
pub fn uniform_bands(fit: &SelectionDRFit, contrasts: &[Vec<f64>], plan: &BootstrapPlan) -> Result<Vec<UniformBand>, InferenceError> {
    plan.validate()?;
    let k = fit.k_theta();
    let n = fit.n;
    let g = fit.thresholds.len();
    if fit.thresholds.iter().any(|t| t.psi.len() != n * k) {
        return Err(InferenceError::MissingInfluence);
    }
    for c in contrasts {
        if c.len() != k {
            return Err(InferenceError::ContrastLength { got: c.len(), expected: k });
        }
    }
    // proj[c][j][i] = c′ψᵢ(y_j)
    let proj: Vec<Vec<Vec<f64>>> = contrasts
        .iter()
        .map(|c| {
            (0..g)
                .map(|j| (0..n).map(|i| fit.psi_row(j, i).iter().zip(c).map(|(a, b)| a * b).sum()).collect())
                .collect()
        })
        .collect();
    let se: Vec<Vec<f64>> = proj
        .iter()
        .map(|pc| pc.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64).collect())
        .collect();
    for s in &se {
        if s.iter().all(|v| !(*v > 0.0)) {
            return Err(InferenceError::NoVariation);
        }
    }

    let sups: Vec<Vec<f64>> = (0..plan.b_draws)
        .into_par_iter()
        .map(|b| {
            let w = multiplier_weights(n, b, plan.seed);
            proj.iter()
                .zip(&se)
                .map(|(pc, sc)| {
                    let mut sup = 0.0_f64;
                    for (p, &s) in pc.iter().zip(sc) {
                        if s > 0.0 {
                            let dev: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                            sup = sup.max(dev.abs() / s);
                        }
                    }
                    sup
                })
                .collect()
        })
        .collect();

    let grid = fit.grid();
    Ok(contrasts
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let cv = critical_value(sups.iter().map(|s| s[m]).collect(), plan.band_level);
            let center: Vec<f64> = fit
                .thresholds
                .iter()
                .map(|t| t.theta.stacked().iter().zip(c).map(|(a, b)| a * b).sum())
                .collect();
            let half: Vec<f64> = se[m].iter().map(|s| cv * s).collect();
            let excluded = grid
                .iter()
                .zip(&se[m])
                .filter(|(_, s)| !(**s > 0.0))
                .map(|(y, _)| *y)
                .collect::<Vec<_>>();
            if !excluded.is_empty() {
                log::warn!("{} thresholds with zero standard error left out of the sup", excluded.len());
            }
            UniformBand {
                grid: grid.clone(),
                lower: center.iter().zip(&half).map(|(c, h)| c - h).collect(),
                upper: center.iter().zip(&half).map(|(c, h)| c + h).collect(),
                center,
                se: se[m].clone(),
                half_width: half,
                critical_value: cv,
                level: plan.band_level,
                b_draws: plan.b_draws,
                seed: plan.seed,
                excluded,
            }
        })
        .collect())
}

pub fn uniform_band(fit: &SelectionDRFit, c: &[f64], plan: &BootstrapPlan) -> Result<UniformBand, InferenceError> {
    Ok(uniform_bands(fit, &[c.to_vec()], plan)?.remove(0))
}

/// A group entering a bootstrapped functional: its fit and its sample.
#[derive(Debug, Clone, Copy)]
pub struct FunctionalGroup<'a> {
    pub label: &'a str,
    pub fit: &'a SelectionDRFit,
    pub data: &'a ObservationSet,
}

/// Which plug-in curve to bootstrap; indexes refer to the group slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalRequest {
    Latent { group: usize },
    Observed { group: usize },
    CounterfactualLatent { beta_from: usize, x_from: usize },
    CounterfactualObserved {
        sorting_from: usize,
        selection_from: usize,
        outcome_from: usize,
        composition_from: usize,
    },
}

/// Bootstrap version of a group's parameters and covariate weights.
fn perturbed_group<'a>(g: &FunctionalGroup<'a>, h1_inv: &nalgebra::DMatrix<f64>, w: Option<&[f64]>) -> GroupInputs<'a> {
    let mut inputs = GroupInputs {
        label: g.label.to_string(),
        params: g.fit.params(),
        sorting: g.fit.spec.sorting_index(),
        x: g.data.x(),
        z: g.data.z(),
        weights: None,
    };
    let Some(w) = w else { return inputs };
    let n = g.fit.n as f64;
    let kz = g.fit.first.k();
    let mut agg = vec![0.0; kz];
    for (i, wi) in w.iter().enumerate() {
        for (a, s) in agg.iter_mut().zip(g.fit.first.score_row(i)) {
            *a += wi * s / n;
        }
    }
    for a in 0..kz {
        let shift: f64 = (0..kz).map(|b| h1_inv[(a, b)] * agg[b]).sum();
        inputs.params.pi[a] -= shift;
    }
    inputs.params = SelectionDRParams {
        pi: inputs.params.pi,
        thetas: bootstrap_theta(g.fit, w),
    };
    inputs.weights = Some(w.iter().map(|v| 1.0 + v).collect());
    inputs
}

fn evaluate_request(inputs: &[GroupInputs<'_>], request: FunctionalRequest) -> Result<DistributionCurve, CounterfactualError> {
    match request {
        FunctionalRequest::Latent { group } => counterfactual_latent(&inputs[group], &inputs[group]),
        FunctionalRequest::Observed { group } => {
            let g = &inputs[group];
            counterfactual_observed(g, g, g, g)
        }
        FunctionalRequest::CounterfactualLatent { beta_from, x_from } => {
            counterfactual_latent(&inputs[beta_from], &inputs[x_from])
        }
        FunctionalRequest::CounterfactualObserved {
            sorting_from,
            selection_from,
            outcome_from,
            composition_from,
        } => counterfactual_observed(
            &inputs[sorting_from],
            &inputs[selection_from],
            &inputs[outcome_from],
            &inputs[composition_from],
        ),
    }
}

/// Draw-specific multipliers for every group, or none for the point estimate.
pub struct GroupDraws {
    h1_inv: Vec<nalgebra::DMatrix<f64>>,
}

impl GroupDraws {
    pub fn new(groups: &[FunctionalGroup<'_>]) -> Self {
        Self {
            h1_inv: groups.iter().map(|g| inverse_with_ridge(&g.fit.first.h1(), -1.0).0).collect(),
        }
    }

    pub fn inputs<'a>(&self, groups: &[FunctionalGroup<'a>], weights: Option<&[Vec<f64>]>) -> Vec<GroupInputs<'a>> {
        groups
            .iter()
            .enumerate()
            .map(|(g, grp)| perturbed_group(grp, &self.h1_inv[g], weights.map(|w| w[g].as_slice())))
            .collect()
    }

    pub fn weights(groups: &[FunctionalGroup<'_>], b: usize, seed: u64) -> Vec<Vec<f64>> {
        groups
            .iter()
            .enumerate()
            .map(|(g, grp)| multiplier_weights(grp.fit.n, b, group_seed(seed, g)))
            .collect()
    }
}

/// Plug-in curve recomputed with (π̂ᵇ, θ̂ᵇ, weighted F_Z); `weights` holds one
/// multiplier vector per group.
pub fn bootstrap_functional(
    groups: &[FunctionalGroup<'_>],
    weights: &[Vec<f64>],
    request: FunctionalRequest,
) -> Result<DistributionCurve, InferenceError> {
    let draws = GroupDraws::new(groups);
    let inputs = draws.inputs(groups, Some(weights));
    Ok(evaluate_request(&inputs, request)?)
}

/// Sup-t band for a stacked vector of functional values whose bootstrap
/// versions are produced by `draw(b)`; SEs are the bootstrap SDs.
pub fn sup_t_band<F>(center: &[f64], plan: &BootstrapPlan, draw: F) -> Result<CurveBand, InferenceError>
where
    F: Fn(usize) -> Result<Vec<f64>, InferenceError> + Sync,
{
    plan.validate()?;
    let draws: Vec<Vec<f64>> = (0..plan.b_draws)
        .into_par_iter()
        .map(&draw)
        .collect::<Result<_, _>>()?;
    sup_t_from_draws(center, &draws, plan.band_level)
}

/// Sup-t band from precomputed bootstrap draws of a stacked functional.
pub fn sup_t_from_draws(center: &[f64], draws: &[Vec<f64>], level: f64) -> Result<CurveBand, InferenceError> {
    let m = center.len();
    let b = draws.len() as f64;
    let se: Vec<f64> = (0..m)
        .map(|j| {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / b;
            let var = draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / b;
            var.sqrt()
        })
        .collect();
    if se.iter().all(|s| !(*s > 0.0)) {
        return Err(InferenceError::NoVariation);
    }
    let sups: Vec<f64> = draws
        .iter()
        .map(|d| {
            (0..m)
                .filter(|&j| se[j] > 0.0)
                .map(|j| (d[j] - center[j]).abs() / se[j])
                .fold(0.0, f64::max)
        })
        .collect();
    let cv = critical_value(sups, level);
    Ok(CurveBand {
        lower: center.iter().zip(&se).map(|(c, s)| c - cv * s).collect(),
        upper: center.iter().zip(&se).map(|(c, s)| c + cv * s).collect(),
        se,
        critical_value: cv,
        level,
    })
}

/// Point curve with a uniform band from the multiplier bootstrap; band
/// curves are clipped to [0, 1].
pub fn functional_band(
    groups: &[FunctionalGroup<'_>],
    request: FunctionalRequest,
    plan: &BootstrapPlan,
) -> Result<DistributionCurve, InferenceError> {
    let draws = GroupDraws::new(groups);
    let mut curve = evaluate_request(&draws.inputs(groups, None), request)?;
    let mut band = sup_t_band(&curve.values, plan, |b| {
        let w = GroupDraws::weights(groups, b, plan.seed);
        Ok(evaluate_request(&draws.inputs(groups, Some(&w)), request)?.values)
    })?;
    for v in band.lower.iter_mut().chain(band.upper.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    curve.band = Some(band);
    Ok(curve)
}

/// Which decomposition to bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub enum DecompositionKind {
    /// Latent structure/composition split.
    Two,
    /// Observed four-way split in the given order.
    Four(Vec<Component>),
}

fn chain_for<'a>(inputs: &[GroupInputs<'a>], kind: &DecompositionKind) -> Result<Vec<DistributionCurve>, CounterfactualError> {
    match kind {
        DecompositionKind::Two => two_way_chain(&inputs[0], &inputs[1]),
        DecompositionKind::Four(order) => four_way_chain(&inputs[0], &inputs[1], order),
    }
}

fn chain_diffs(chain: &[DistributionCurve]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = |a: &DistributionCurve, b: &DistributionCurve| -> Vec<f64> {
        a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect()
    };
    let last = chain.len() - 1;
    (d(&chain[0], &chain[last]), chain.windows(2).map(|w| d(&w[0], &w[1])).collect())
}

/// Decomposition of group 0 (first) versus group 1 (second) with bands. The
/// component bands share one sup-t critical value across all components;
/// the total has its own.
pub fn decomposition_with_bands(
    groups: &[FunctionalGroup<'_>; 2],
    kind: &DecompositionKind,
    plan: &BootstrapPlan,
) -> Result<DecompositionReport, InferenceError> {
    let draws = GroupDraws::new(groups);
    let point = draws.inputs(groups, None);
    let mut report = match kind {
        DecompositionKind::Two => crate::counterfactual::decompose_two(&point[0], &point[1])?,
        DecompositionKind::Four(order) => crate::counterfactual::decompose_four(&point[0], &point[1], order)?,
    };
    let g = report.grid.len();
    let stacked: Vec<f64> = report.components.iter().flat_map(|c| c.values.iter().copied()).collect();
    plan.validate()?;
    let boot: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.b_draws)
        .into_par_iter()
        .map(|b| -> Result<_, InferenceError> {
            let w = GroupDraws::weights(groups, b, plan.seed);
            let chain = chain_for(&draws.inputs(groups, Some(&w)), kind)?;
            let (total, comps) = chain_diffs(&chain);
            Ok((total, comps.concat()))
        })
        .collect::<Result<_, _>>()?;
    let (totals, comps): (Vec<Vec<f64>>, Vec<Vec<f64>>) = boot.into_iter().unzip();
    let comp_band = sup_t_from_draws(&stacked, &comps, plan.band_level)?;
    let total_band = sup_t_from_draws(&report.total, &totals, plan.band_level)?;
    for (m, comp) in report.components.iter_mut().enumerate() {
        comp.band = Some(CurveBand {
            lower: comp_band.lower[m * g..(m + 1) * g].to_vec(),
            upper: comp_band.upper[m * g..(m + 1) * g].to_vec(),
            se: comp_band.se[m * g..(m + 1) * g].to_vec(),
            critical_value: comp_band.critical_value,
            level: comp_band.level,
        });
    }
    report.total_band = Some(total_band);
    Ok(report)
}

/// Quantile curve with a band obtained by inverting a distribution band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub taus: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub center_status: Vec<QuantileStatus>,
    /// The band endpoint at τ hit the edge of the grid.
    pub truncated: Vec<bool>,
}

/// Lower quantile band from the upper CDF band and vice versa; all three
/// curves are rearranged before inversion.
pub fn quantile_band_by_inversion(cdf: &DistributionCurve, taus: &[f64]) -> Result<QuantileBand, InferenceError> {
    let cdf = rearrange(cdf);
    let band = cdf.band.clone().ok_or(InferenceError::NoVariation)?;
    for &t in taus {
        if !(t > 0.0 && t < 1.0) {
            return Err(CounterfactualError::BadIndex(t).into());
        }
    }
    let mut out = QuantileBand {
        taus: taus.to_vec(),
        center: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        center_status: Vec::new(),
        truncated: Vec::new(),
    };
    for &t in taus {
        let c = quantile_of(&cdf.grid, &cdf.values, t);
        let lo = quantile_of(&cdf.grid, &band.upper, t);
        let hi = quantile_of(&cdf.grid, &band.lower, t);
        out.center.push(c.value);
        out.center_status.push(c.status);
        out.lower.push(lo.value);
        out.upper.push(hi.value);
        out.truncated.push(lo.status != QuantileStatus::Interior || hi.status != QuantileStatus::Interior);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_centered_and_reproducible() {
        let w = multiplier_weights(1000, 3, 42);
        assert!(w.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(w, multiplier_weights(1000, 3, 42));
        assert_ne!(w, multiplier_weights(1000, 4, 42));
    }

    #[test]
    fn ceiling_order_statistic() {
        assert_eq!(critical_value(vec![3.0], 0.95), 3.0);
        let stats: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(critical_value(stats.clone(), 0.95), 190.0);
        assert_eq!(critical_value(stats, 0.951), 191.0);
    }

    #[test]
    fn zero_width_band_inverts_to_point() {
        let mut c = DistributionCurve::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.5, 0.9]);
        c.band = Some(CurveBand {
            lower: c.values.clone(),
            upper: c.values.clone(),
            se: vec![0.0; 3],
            critical_value: 0.0,
            level: 0.95,
        });
        let q = quantile_band_by_inversion(&c, &[0.3, 0.5, 0.7]).unwrap();
        assert_eq!(q.center, vec![2.0, 2.0, 3.0]);
        assert_eq!(q.lower, q.center);
        assert_eq!(q.upper, q.center);
    }
}
