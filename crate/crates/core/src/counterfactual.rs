//! Plug-in distribution functionals: latent, observed and counterfactual
//! distributions, selection probabilities, rearrangement, quantiles and
//! decompositions of group differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvn::{bvn_cdf, bvn_pdf, norm_cdf, norm_pdf, KernelError};
use crate::data::{dot, Covariates, ObservationSet};
use crate::estimate::SelectionDRFit;
use crate::model::SelectionDRParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error("empty covariate sample")]
    EmptySample,
    #[error("selection probability integrates to zero for the requested sources")]
    DegenerateSelection,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("curve is not monotone; rearrange it first")]
    NotMonotone,
    #[error("probability index {0} outside (0, 1)")]
    BadIndex(f64),
    #[error("weights have length {got}, sample has {expected} rows")]
    WeightLength { got: usize, expected: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub se: Vec<f64>,
    pub critical_value: f64,
    pub level: f64,
}

/// A distribution function tabulated on a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub monotone: bool,
    pub band: Option<CurveBand>,
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

impl DistributionCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Self {
        let values: Vec<f64> = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            monotone: nondecreasing(&values),
            grid,
            values,
            band: None,
        }
    }
}

/// Sorts the values on the fixed grid (and the band curves, if any).
pub fn rearrange(curve: &DistributionCurve) -> DistributionCurve {
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    DistributionCurve {
        grid: curve.grid.clone(),
        values: sorted(&curve.values),
        monotone: true,
        band: curve.band.as_ref().map(|b| CurveBand {
            lower: sorted(&b.lower),
            upper: sorted(&b.upper),
            ..b.clone()
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileStatus {
    Interior,
    /// τ at or below the curve's first value.
    BelowGrid,
    /// τ above every value of the curve; the value is +∞.
    AboveGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileValue {
    pub value: f64,
    pub status: QuantileStatus,
}

/// Left inverse on the grid: the smallest grid y with F(y) ≥ τ.
pub fn quantile_of(grid: &[f64], values: &[f64], tau: f64) -> QuantileValue {
    match values.iter().position(|&v| v >= tau) {
        Some(0) => QuantileValue {
            value: grid[0],
            status: QuantileStatus::BelowGrid,
        },
        Some(k) => QuantileValue {
            value: grid[k],
            status: QuantileStatus::Interior,
        },
        None => QuantileValue {
            value: f64::INFINITY,
            status: QuantileStatus::AboveGrid,
        },
    }
}

pub fn quantile(curve: &DistributionCurve, tau: f64) -> Result<QuantileValue, CounterfactualError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CounterfactualError::BadIndex(tau));
    }
    if !nondecreasing(&curve.values) {
        return Err(CounterfactualError::NotMonotone);
    }
    Ok(quantile_of(&curve.grid, &curve.values, tau))
}

/// Parameters and covariate sample of one group.
#[derive(Debug, Clone)]
pub struct GroupInputs<'a> {
    pub label: String,
    pub params: SelectionDRParams,
    /// Positions of the sorting columns in X.
    pub sorting: Vec<usize>,
    pub x: &'a Covariates,
    pub z: &'a Covariates,
    /// Sampling weights for the empirical covariate distribution.
    pub weights: Option<Vec<f64>>,
}

impl<'a> GroupInputs<'a> {
    pub fn from_fit(label: impl Into<String>, fit: &SelectionDRFit, data: &'a ObservationSet) -> Self {
        Self {
            label: label.into(),
            params: fit.params(),
            sorting: fit.spec.sorting_index(),
            x: data.x(),
            z: data.z(),
            weights: None,
        }
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn check(&self) -> Result<(), CounterfactualError> {
        if self.n() == 0 {
            return Err(CounterfactualError::EmptySample);
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n() {
                return Err(CounterfactualError::WeightLength {
                    got: w.len(),
                    expected: self.n(),
                });
            }
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn total_weight(&self) -> f64 {
        self.weights.as_ref().map_or(self.n() as f64, |w| w.iter().sum())
    }
}

fn check_schema(groups: &[&GroupInputs<'_>]) -> Result<(), CounterfactualError> {
    let first = groups[0];
    first.check()?;
    for g in &groups[1..] {
        g.check()?;
        if g.x.names() != first.x.names() || g.z.names() != first.z.names() {
            return Err(CounterfactualError::Schema(format!(
                "groups {} and {} have different covariate layouts",
                first.label, g.label
            )));
        }
        if g.sorting != first.sorting {
            return Err(CounterfactualError::Schema("sorting columns differ".into()));
        }
        if g.params.grid() != first.params.grid() {
            return Err(CounterfactualError::Schema(format!(
                "groups {} and {} are estimated on different grids",
                first.label, g.label
            )));
        }
    }
    Ok(())
}

/// F_{Y*}(y) = ∫Φ(−x′β(y)) dF_X(x) with β from `beta_from` and F_X from `x_from`.
pub fn counterfactual_latent(
    beta_from: &GroupInputs<'_>,
    x_from: &GroupInputs<'_>,
) -> Result<DistributionCurve, CounterfactualError> {
    check_schema(&[beta_from, x_from])?;
    let total = x_from.total_weight();
    let values: Vec<f64> = beta_from
        .params
        .thetas
        .par_iter()
        .map(|theta| {
            let mut acc = 0.0;
            for (i, x) in x_from.x.rows().enumerate() {
                acc += x_from.weight(i) * norm_cdf(-dot(&theta.beta, x));
            }
            acc / total
        })
        .collect();
    Ok(DistributionCurve::new(beta_from.params.grid(), values))
}

pub fn latent_distribution(group: &GroupInputs<'_>) -> Result<DistributionCurve, CounterfactualError> {
    counterfactual_latent(group, group)
}

/// ∫Φ(z′π) dF_Z(z).
pub fn selection_probability(pi: &[f64], z: &Covariates, weights: Option<&[f64]>) -> Result<f64, CounterfactualError> {
    if z.nrows() == 0 {
        return Err(CounterfactualError::EmptySample);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, row) in z.rows().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        num += w * norm_cdf(dot(pi, row));
        den += w;
    }
    Ok(num / den)
}

/// F_{Y⟨t,s,r,k⟩}(y): sorting δ from t, selection π from s, outcome β from r,
/// covariates from k.
pub fn counterfactual_observed(
    sorting_from: &GroupInputs<'_>,
    selection_from: &GroupInputs<'_>,
    outcome_from: &GroupInputs<'_>,
    composition_from: &GroupInputs<'_>,
) -> Result<DistributionCurve, CounterfactualError> {
    check_schema(&[sorting_from, selection_from, outcome_from, composition_from])?;
    let k = composition_from;
    let pi = &selection_from.params.pi;
    let s: Vec<f64> = k.z.rows().map(|z| dot(pi, z)).collect();
    let mut den = 0.0;
    for (i, si) in s.iter().enumerate() {
        den += k.weight(i) * norm_cdf(*si);
    }
    if !(den > 0.0) {
        return Err(CounterfactualError::DegenerateSelection);
    }
    let sorting = &k.sorting;
    let values: Vec<f64> = outcome_from
        .params
        .thetas
        .par_iter()
        .zip(sorting_from.params.thetas.par_iter())
        .map(|(tr, tt)| {
            let mut num = 0.0;
            for (i, x) in k.x.rows().enumerate() {
                let a = dot(&tr.beta, x);
                let u: f64 = sorting.iter().zip(&tt.delta).map(|(&j, d)| x[j] * d).sum();
                num += k.weight(i) * bvn_cdf(-a, s[i], -u.tanh());
            }
            num / den
        })
        .collect();
    Ok(DistributionCurve::new(outcome_from.params.grid(), values))
}

pub fn observed_distribution(group: &GroupInputs<'_>) -> Result<DistributionCurve, CounterfactualError> {
    counterfactual_observed(group, group, group, group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sorting,
    SelectionStructure,
    OutcomeStructure,
    Composition,
    /// Latent two-term decomposition.
    Structure,
}

impl Component {
    pub fn name(&self) -> &'static str {
        match self {
            Component::Sorting => "sorting",
            Component::SelectionStructure => "selection_structure",
            Component::OutcomeStructure => "outcome_structure",
            Component::Composition => "composition",
            Component::Structure => "structure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Component::Sorting,
            Component::SelectionStructure,
            Component::OutcomeStructure,
            Component::Composition,
            Component::Structure,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }

    fn slot(&self) -> usize {
        match self {
            Component::Sorting => 0,
            Component::SelectionStructure => 1,
            Component::OutcomeStructure => 2,
            Component::Composition | Component::Structure => 3,
        }
    }
}

/// Sorting, selection structure, outcome structure, composition.
pub const DEFAULT_ORDER: [Component; 4] = [
    Component::Sorting,
    Component::SelectionStructure,
    Component::OutcomeStructure,
    Component::Composition,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub component: Component,
    pub values: Vec<f64>,
    pub band: Option<CurveBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub grid: Vec<f64>,
    pub total: Vec<f64>,
    pub total_band: Option<CurveBand>,
    pub components: Vec<NamedCurve>,
    pub order: Vec<Component>,
    pub groups: [String; 2],
}

impl DecompositionReport {
    /// Sorting plus selection-structure contributions, when both are present.
    pub fn selection_effect(&self) -> Option<Vec<f64>> {
        let get = |c: Component| self.components.iter().find(|n| n.component == c);
        let a = get(Component::Sorting)?;
        let b = get(Component::SelectionStructure)?;
        Some(a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect())
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Curves along the extraction chain: F⟨1,1,1,1⟩, then one index switched to
/// group 0 per step in `order`.
pub fn four_way_chain(
    g1: &GroupInputs<'_>,
    g0: &GroupInputs<'_>,
    order: &[Component],
) -> Result<Vec<DistributionCurve>, CounterfactualError> {
    validate_order(order)?;
    let mut idx = [1usize; 4];
    let pick = |v: usize| if v == 1 { g1 } else { g0 };
    let eval = |idx: &[usize; 4]| counterfactual_observed(pick(idx[0]), pick(idx[1]), pick(idx[2]), pick(idx[3]));
    let mut chain = vec![eval(&idx)?];
    for c in order {
        idx[c.slot()] = 0;
        chain.push(eval(&idx)?);
    }
    Ok(chain)
}

fn validate_order(order: &[Component]) -> Result<(), CounterfactualError> {
    let mut seen = [false; 4];
    for c in order {
        if *c == Component::Structure || seen[c.slot()] {
            return Err(CounterfactualError::Schema(format!(
                "order must be a permutation of sorting, selection_structure, outcome_structure, composition; got {order:?}"
            )));
        }
        seen[c.slot()] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(CounterfactualError::Schema(format!("order {order:?} is incomplete")));
    }
    Ok(())
}

fn report_from_chain(chain: &[DistributionCurve], order: &[Component], labels: [String; 2]) -> DecompositionReport {
    let last = chain.len() - 1;
    DecompositionReport {
        grid: chain[0].grid.clone(),
        total: diff(&chain[0].values, &chain[last].values),
        total_band: None,
        components: order
            .iter()
            .enumerate()
            .map(|(m, c)| NamedCurve {
                component: *c,
                values: diff(&chain[m].values, &chain[m + 1].values),
                band: None,
            })
            .collect(),
        order: order.to_vec(),
        groups: labels,
    }
}

/// Observed-distribution difference between groups 1 and 0 split into four
/// telescoping contributions in the given extraction order.
pub fn decompose_four(
    g1: &GroupInputs<'_>,
    g0: &GroupInputs<'_>,
    order: &[Component],
) -> Result<DecompositionReport, CounterfactualError> {
    let chain = four_way_chain(g1, g0, order)?;
    Ok(report_from_chain(&chain, order, [g1.label.clone(), g0.label.clone()]))
}

/// Latent chain F⟨1,1⟩, F⟨0,1⟩, F⟨0,0⟩ (β source, X source).
pub fn two_way_chain(g1: &GroupInputs<'_>, g0: &GroupInputs<'_>) -> Result<Vec<DistributionCurve>, CounterfactualError> {
    Ok(vec![
        counterfactual_latent(g1, g1)?,
        counterfactual_latent(g0, g1)?,
        counterfactual_latent(g0, g0)?,
    ])
}

/// Latent-distribution difference split into structure and composition.
pub fn decompose_two(g1: &GroupInputs<'_>, g0: &GroupInputs<'_>) -> Result<DecompositionReport, CounterfactualError> {
    let chain = two_way_chain(g1, g0)?;
    let order = [Component::Structure, Component::Composition];
    Ok(report_from_chain(&chain, &order, [g1.label.clone(), g0.label.clone()]))
}

/// Selection probabilities with π from group s and F_Z from group k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmploymentTable {
    /// `cells[s][k]`, with index 1 for the first group and 0 for the second.
    pub cells: [[f64; 2]; 2],
    pub total: f64,
    pub structure: f64,
    pub composition: f64,
}

pub fn employment_decomposition(g1: &GroupInputs<'_>, g0: &GroupInputs<'_>) -> Result<EmploymentTable, CounterfactualError> {
    check_schema(&[g1, g0])?;
    let g = [g0, g1];
    let mut cells = [[0.0; 2]; 2];
    for s in 0..2 {
        for k in 0..2 {
            cells[s][k] = selection_probability(&g[s].params.pi, g[k].z, g[k].weights.as_deref())?;
        }
    }
    Ok(EmploymentTable {
        cells,
        total: cells[1][1] - cells[0][0],
        structure: cells[1][1] - cells[0][1],
        composition: cells[0][1] - cells[0][0],
    })
}

/// Derivatives of F_Y(y) = Φ₂(−β, π; −ρ)/Φ(π) in the no-covariate model with
/// respect to ρ and π.
pub fn remark2_signs(beta: f64, pi: f64, rho: f64) -> Result<(f64, f64), CounterfactualError> {
    let sel = norm_cdf(pi);
    let d_rho = -bvn_pdf(-beta, pi, -rho)? / sel;
    let scale = (1.0 - rho * rho).sqrt();
    let num = norm_cdf((-beta + rho * pi) / scale) * norm_pdf(pi) * sel - bvn_cdf(-beta, pi, -rho) * norm_pdf(pi);
    Ok((d_rho, num / (sel * sel)))
}
