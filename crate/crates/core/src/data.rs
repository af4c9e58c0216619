//! Observation containers shared by estimation, counterfactuals and the CLI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the constant column prepended to every design.
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("row {row} has {got} values, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("selection indicator is constant (share selected = {share}); need 0 < Pr(D = 1) < 1")]
    DegenerateSelection { share: f64 },
    #[error("selected unit {row} has a missing or non-finite outcome")]
    MissingOutcome { row: usize },
    #[error("column lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("non-finite covariate value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("unknown column {0}")]
    UnknownColumn(String),
}

/// Dense row-major covariate matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    names: Vec<String>,
    values: Vec<f64>,
    nrows: usize,
}

impl Covariates {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self, DataError> {
        let k = names.len();
        if k == 0 || values.len() % k != 0 {
            return Err(DataError::LengthMismatch(format!(
                "{} values for {} columns",
                values.len(),
                k
            )));
        }
        let nrows = values.len() / k;
        let cov = Self { names, values, nrows };
        if let Some(pos) = cov.values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / k,
                column: cov.names[pos % k].clone(),
            });
        }
        Ok(cov)
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let k = names.len();
        let mut values = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(DataError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: k,
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(names, values)
    }

    /// Like `new`, but an empty name list gives `n` rows with no columns.
    pub fn with_rows(names: Vec<String>, values: Vec<f64>, n: usize) -> Result<Self, DataError> {
        if names.is_empty() && values.is_empty() {
            return Ok(Self::empty(n));
        }
        Self::new(names, values)
    }

    /// `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Self { names: Vec::new(), values: Vec::new(), nrows: n }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(|i| self.row(i))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Multiplies column `j` by `factor`.
    pub fn scale_column(&mut self, j: usize, factor: f64) {
        let k = self.names.len();
        for v in self.values.iter_mut().skip(j).step_by(k) {
            *v *= factor;
        }
    }

    /// Keeps the rows whose index satisfies `keep`.
    pub fn select_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let values = self
            .rows()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .flat_map(|(_, r)| r.iter().copied())
            .collect::<Vec<f64>>();
        let nrows = (0..self.nrows).filter(|&i| keep(i)).count();
        Self {
            names: self.names.clone(),
            values,
            nrows,
        }
    }

    /// Rows in the given order.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let values = order
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        Self {
            names: self.names.clone(),
            values,
            nrows: order.len(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A sample from (D, DY, Z): selection indicator, outcome where selected,
/// the outcome design X and the full design Z = (Z₁, X), both with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    d: Vec<bool>,
    y: Vec<f64>,
    x: Covariates,
    z: Covariates,
}

impl ObservationSet {
    /// Builds the designs X = (1, outcome) and Z = (1, excluded, outcome).
    ///
    /// `y[i]` is ignored when `d[i]` is false and must be finite otherwise.
    pub fn new(
        d: Vec<bool>,
        y: Vec<Option<f64>>,
        outcome: &Covariates,
        excluded: &Covariates,
    ) -> Result<Self, DataError> {
        let n = d.len();
        if y.len() != n || outcome.nrows() != n || excluded.nrows() != n {
            return Err(DataError::LengthMismatch(format!(
                "d: {n}, y: {}, outcome rows: {}, excluded rows: {}",
                y.len(),
                outcome.nrows(),
                excluded.nrows()
            )));
        }
        let mut x_names = vec![INTERCEPT.to_string()];
        x_names.extend(outcome.names().iter().cloned());
        let mut z_names = vec![INTERCEPT.to_string()];
        z_names.extend(excluded.names().iter().cloned());
        z_names.extend(outcome.names().iter().cloned());

        let mut xv = Vec::with_capacity(n * x_names.len());
        let mut zv = Vec::with_capacity(n * z_names.len());
        for i in 0..n {
            xv.push(1.0);
            xv.extend_from_slice(outcome.row(i));
            zv.push(1.0);
            zv.extend_from_slice(excluded.row(i));
            zv.extend_from_slice(outcome.row(i));
        }
        let x = Covariates::new(x_names, xv)?;
        let z = Covariates::new(z_names, zv)?;
        let y = y
            .into_iter()
            .zip(&d)
            .enumerate()
            .map(|(i, (v, &sel))| match (sel, v) {
                (true, Some(v)) if v.is_finite() => Ok(v),
                (true, _) => Err(DataError::MissingOutcome { row: i }),
                (false, _) => Ok(f64::NAN),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_designs(d, y, x, z)
    }

    /// Uses the designs as given; both must already carry the intercept.
    pub fn from_designs(
        d: Vec<bool>,
        y: Vec<f64>,
        x: Covariates,
        z: Covariates,
    ) -> Result<Self, DataError> {
        let n = d.len();
        if y.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(DataError::LengthMismatch(format!(
                "d: {n}, y: {}, x rows: {}, z rows: {}",
                y.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        let selected = d.iter().filter(|&&v| v).count();
        if selected == 0 || selected == n {
            return Err(DataError::DegenerateSelection {
                share: selected as f64 / n.max(1) as f64,
            });
        }
        if let Some(row) = (0..n).find(|&i| d[i] && !y[i].is_finite()) {
            return Err(DataError::MissingOutcome { row });
        }
        Ok(Self { d, y, x, z })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn d(&self) -> &[bool] {
        &self.d
    }

    /// Outcomes; NaN where the unit is not selected.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Covariates {
        &self.x
    }

    pub fn z(&self) -> &Covariates {
        &self.z
    }

    pub fn selected_share(&self) -> f64 {
        self.d.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    /// Outcomes of the selected units, in sample order.
    pub fn selected_outcomes(&self) -> Vec<f64> {
        self.d
            .iter()
            .zip(&self.y)
            .filter(|(d, _)| **d)
            .map(|(_, y)| *y)
            .collect()
    }

    /// Same units in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            d: order.iter().map(|&i| self.d[i]).collect(),
            y: order.iter().map(|&i| self.y[i]).collect(),
            x: self.x.permute_rows(order),
            z: self.z.permute_rows(order),
        }
    }

    /// Rescales a named non-intercept covariate in both designs.
    pub fn rescale_covariate(&mut self, name: &str, factor: f64) -> Result<(), DataError> {
        let jx = self
            .x
            .column_index(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        self.x.scale_column(jx, factor);
        if let Some(jz) = self.z.column_index(name) {
            self.z.scale_column(jz, factor);
        }
        Ok(())
    }

    /// Keeps the units whose index satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool + Copy) -> Result<Self, DataError> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self::from_designs(
            idx.iter().map(|&i| self.d[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
            self.x.select_rows(keep),
            self.z.select_rows(keep),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ObservationSet {
        let outcome = Covariates::from_rows(vec!["age".into()], &[vec![30.0], vec![41.0], vec![52.0]]).unwrap();
        let excluded = Covariates::from_rows(vec!["benefit".into()], &[vec![5.1], vec![4.9], vec![6.0]]).unwrap();
        ObservationSet::new(vec![true, false, true], vec![Some(2.3), None, Some(2.9)], &outcome, &excluded).unwrap()
    }

    #[test]
    fn designs_carry_intercept_and_ordering() {
        let obs = small();
        assert_eq!(obs.x().names(), ["intercept", "age"]);
        assert_eq!(obs.z().names(), ["intercept", "benefit", "age"]);
        assert_eq!(obs.z().row(1), [1.0, 4.9, 41.0]);
        assert!(obs.y()[1].is_nan());
        assert_eq!(obs.selected_outcomes(), vec![2.3, 2.9]);
    }

    #[test]
    fn rejects_selected_without_outcome() {
        let outcome = Covariates::from_rows(vec!["a".into()], &[vec![0.0], vec![1.0]]).unwrap();
        let excluded = Covariates::from_rows(vec!["b".into()], &[vec![0.0], vec![1.0]]).unwrap();
        let err = ObservationSet::new(vec![true, false], vec![None, None], &outcome, &excluded).unwrap_err();
        assert_eq!(err, DataError::MissingOutcome { row: 0 });
    }

    #[test]
    fn rejects_constant_selection() {
        let outcome = Covariates::from_rows(vec!["a".into()], &[vec![0.0], vec![1.0]]).unwrap();
        let excluded = Covariates::from_rows(vec!["b".into()], &[vec![0.0], vec![1.0]]).unwrap();
        let err = ObservationSet::new(vec![true, true], vec![Some(1.0), Some(2.0)], &outcome, &excluded).unwrap_err();
        assert!(matches!(err, DataError::DegenerateSelection { .. }));
    }

    #[test]
    fn rescale_touches_both_designs() {
        let mut obs = small();
        obs.rescale_covariate("age", 0.1).unwrap();
        assert!((obs.x().row(2)[1] - 5.2).abs() < 1e-12);
        assert!((obs.z().row(2)[2] - 5.2).abs() < 1e-12);
        assert!(obs.rescale_covariate("nope", 2.0).is_err());
    }
}
