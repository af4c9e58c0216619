//! On-disk fit artifacts and tidy CSV tables. Floats are written in shortest
//! round-trip form so every table re-parses to the same bits.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::CliError;
use crate::estimate::SelectionDRFit;

pub const FIT_JSON: &str = "fit.json";
pub const INFLUENCE_CSV: &str = "influence.csv";
pub const FIRST_STAGE_CSV: &str = "first_stage_scores.csv";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const COEFFICIENTS_CSV: &str = "coefficients.csv";

/// Empty for NaN, which the readers treat as missing.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| format!("not a number: {s:?}"))
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Write(path.to_path_buf(), e.to_string()))?;
        let err = |e: csv::Error| CliError::Write(path.to_path_buf(), e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Write(path.to_path_buf(), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// File-name-safe form of a label or coefficient name.
pub fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub fn group_dir(out: &Path, label: &str) -> PathBuf {
    out.join(slug(label))
}

/// Writes fit.json, influence.csv, first_stage_scores.csv, diagnostics.csv and coefficients.csv.
pub fn save_fit(dir: &Path, fit: &SelectionDRFit) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_json(&dir.join(FIT_JSON), fit)?;

    let names = fit.coefficient_names();
    let k = names.len();
    let mut t = Table::new(["threshold", "y", "unit"].into_iter().map(String::from).chain(names.iter().cloned()));
    for (j, th) in fit.thresholds.iter().enumerate() {
        for i in 0..fit.n {
            let mut row = vec![j.to_string(), fmt_f64(th.theta.y), i.to_string()];
            row.extend(th.psi[i * k..(i + 1) * k].iter().map(|v| fmt_f64(*v)));
            t.push(row);
        }
    }
    t.write(&dir.join(INFLUENCE_CSV))?;

    let kz = fit.first.k();
    let z_names = fit.spec.z_names();
    let mut t = Table::new(std::iter::once("unit".to_string()).chain(z_names.iter().cloned()));
    for i in 0..fit.n {
        let mut row = vec![i.to_string()];
        row.extend(fit.first.score_rows[i * kz..(i + 1) * kz].iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t.write(&dir.join(FIRST_STAGE_CSV))?;

    let mut t = Table::new([
        "y", "converged", "iterations", "grad_norm", "loglik", "boundary", "damped_steps", "clamped_rows", "ridge", "warm_start",
    ]);
    for th in &fit.thresholds {
        let d = &th.diagnostics;
        t.push(vec![
            fmt_f64(d.y),
            d.converged.to_string(),
            d.iterations.to_string(),
            fmt_f64(d.grad_norm),
            fmt_f64(d.loglik),
            d.boundary.to_string(),
            d.damped_steps.to_string(),
            d.clamped_rows.to_string(),
            d.ridge.to_string(),
            d.warm_start.to_string(),
        ]);
    }
    t.write(&dir.join(DIAGNOSTICS_CSV))?;

    let mut t = Table::new(["y", "coefficient", "estimate", "se"]);
    for (j, th) in fit.thresholds.iter().enumerate() {
        let se = fit.standard_errors(j);
        for ((name, v), s) in names.iter().zip(th.theta.stacked()).zip(se) {
            t.push(vec![fmt_f64(th.theta.y), name.clone(), fmt_f64(v), fmt_f64(s)]);
        }
    }
    t.write(&dir.join(COEFFICIENTS_CSV))
}

fn read_numeric_rows(path: &Path, skip: usize, width: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
        if rec.len() != skip + width {
            return Err(CliError::Artifact(format!("{}: row {} has {} fields, expected {}", path.display(), r + 2, rec.len(), skip + width)));
        }
        let vals = rec
            .iter()
            .skip(skip)
            .map(parse_f64)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| CliError::Artifact(format!("{}: row {}: {m}", path.display(), r + 2)))?;
        out.push(vals);
    }
    Ok(out)
}

/// Reads the fit with its influence functions and first-stage scores.
pub fn load_fit(dir: &Path) -> Result<SelectionDRFit, CliError> {
    let mut fit: SelectionDRFit = read_json(&dir.join(FIT_JSON))?;
    let k = fit.k_theta();
    let n = fit.n;
    let psi = read_numeric_rows(&dir.join(INFLUENCE_CSV), 3, k)?;
    if psi.len() != n * fit.thresholds.len() {
        return Err(CliError::Artifact(format!("{INFLUENCE_CSV} has {} rows, expected {}", psi.len(), n * fit.thresholds.len())));
    }
    for (j, th) in fit.thresholds.iter_mut().enumerate() {
        th.psi = psi[j * n..(j + 1) * n].concat();
    }
    let scores = read_numeric_rows(&dir.join(FIRST_STAGE_CSV), 1, fit.first.k())?;
    if scores.len() != n {
        return Err(CliError::Artifact(format!("{FIRST_STAGE_CSV} has {} rows, expected {n}", scores.len())));
    }
    fit.first.score_rows = scores.concat();
    Ok(fit)
}
