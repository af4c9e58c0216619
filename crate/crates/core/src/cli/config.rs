//! TOML run configuration. Every section is flat key/value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::INTERCEPT;
use crate::inference::BootstrapPlan;
use crate::model::{quantile_indexes, ThresholdGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub outcome: String,
    pub selection: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub excluded: Vec<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub sorting: Vec<String>,
    /// Explicit thresholds; overrides the quantile-index range.
    pub grid: Option<Vec<f64>>,
    pub grid_from: f64,
    pub grid_to: f64,
    pub grid_step: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            sorting: vec![INTERCEPT.to_string()],
            grid: None,
            grid_from: 0.10,
            grid_to: 0.90,
            grid_step: 0.01,
        }
    }
}

impl ModelSection {
    /// Explicit grid, or sample quantiles of `pooled` at the index range.
    pub fn threshold_grid(&self, pooled: &[f64]) -> Result<ThresholdGrid, CliError> {
        match &self.grid {
            Some(v) => Ok(ThresholdGrid::new(v.clone())?),
            None => {
                let taus = quantile_indexes(self.grid_from, self.grid_to, self.grid_step);
                if taus.is_empty() {
                    return Err(CliError::Config("the quantile-index range is empty".into()));
                }
                Ok(ThresholdGrid::from_quantiles(pooled, &taus)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    pub draws: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            draws: 200,
            seed: 1,
            level: 0.95,
        }
    }
}

impl BootstrapSection {
    pub fn plan(&self) -> Result<BootstrapPlan, CliError> {
        Ok(BootstrapPlan::new(self.draws, self.seed, self.level)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("output") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if d.excluded.is_empty() {
            return Err(CliError::Config("at least one excluded covariate is required".into()));
        }
        let mut seen = std::collections::BTreeMap::new();
        let roles = std::iter::once((&d.outcome, "outcome"))
            .chain(std::iter::once((&d.selection, "selection")))
            .chain(d.covariates.iter().map(|c| (c, "covariates")))
            .chain(d.excluded.iter().map(|c| (c, "excluded")))
            .chain(d.group.iter().map(|c| (c, "group")));
        for (col, role) in roles {
            if let Some(prev) = seen.insert(col.clone(), role) {
                return Err(CliError::Config(format!("column {col} has two roles: {prev} and {role}")));
            }
        }
        if self.model.grid.as_ref().is_some_and(|g| g.is_empty()) {
            return Err(CliError::Config("grid is empty".into()));
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.data
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("no input file: set data.input or pass --input".into()))
    }
}

/// Grid flag: `q:FROM:TO:STEP` for quantile indexes, otherwise comma-separated thresholds.
pub fn apply_grid_flag(model: &mut ModelSection, flag: &str) -> Result<(), CliError> {
    let bad = || CliError::Config(format!("cannot parse --grid {flag}"));
    if let Some(rest) = flag.strip_prefix("q:") {
        let parts: Vec<f64> = rest.split(':').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let [from, to, step] = parts[..] else { return Err(bad()) };
        model.grid = None;
        model.grid_from = from;
        model.grid_to = to;
        model.grid_step = step;
    } else {
        let values: Vec<f64> = flag.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        model.grid = Some(values);
    }
    Ok(())
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Wage,
    Gaussian,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub design: DesignKind,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    #[serde(default = "default_sorting")]
    pub sorting: Vec<String>,
    pub beta: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub pi: Option<Vec<f64>>,
    pub rho: Option<f64>,
    pub outcome_dim: Option<usize>,
    pub excluded_dim: Option<usize>,
    /// Share of ones in the binary instrument.
    pub p: Option<f64>,
    #[serde(default = "default_from")]
    pub grid_from: f64,
    #[serde(default = "default_to")]
    pub grid_to: f64,
    #[serde(default = "default_step")]
    pub grid_step: f64,
    #[serde(default = "default_calibration_n")]
    pub calibration_n: usize,
}

fn default_targets() -> Vec<String> {
    vec!["beta:college".into(), "beta:married".into(), "rho".into()]
}
fn default_sorting() -> Vec<String> {
    vec![INTERCEPT.to_string()]
}
fn default_from() -> f64 {
    0.10
}
fn default_to() -> f64 {
    0.90
}
fn default_step() -> f64 {
    0.01
}
fn default_calibration_n() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub simulation: SimulationSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
outcome = "y"
selection = "d"
covariates = ["x1"]
excluded = ["z1"]
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.model.sorting, vec!["intercept"]);
        assert_eq!(c.bootstrap.draws, 200);
        assert_eq!(c.output.dir, PathBuf::from("output"));
        assert!(c.input().is_err());
    }

    #[test]
    fn role_conflict_rejected() {
        let text = MINIMAL.replace(r#"excluded = ["z1"]"#, r#"excluded = ["x1"]"#);
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("x1"), "{err}");
    }

    #[test]
    fn grid_flag_forms() {
        let mut m = ModelSection::default();
        apply_grid_flag(&mut m, "q:0.2:0.8:0.1").unwrap();
        assert_eq!((m.grid_from, m.grid_to, m.grid_step), (0.2, 0.8, 0.1));
        apply_grid_flag(&mut m, "1.5, 2,2.5").unwrap();
        assert_eq!(m.grid, Some(vec![1.5, 2.0, 2.5]));
        assert!(apply_grid_flag(&mut m, "q:0.2:0.8").is_err());
    }
}
