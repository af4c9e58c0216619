use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::{ensure_dir, fmt_f64, group_dir, load_fit, save_fit, slug, write_json, Table};
use super::config::{apply_grid_flag, split_list, BootstrapSection, DesignKind, RunConfig, SimulationConfig};
use super::ingest::{ingest, Ingested};
use super::{BootArgs, CliError, DecompositionMode, FunctionalKind, RunArgs, Status};
use crate::counterfactual::{
    employment_decomposition, four_way_chain, quantile_of, rearrange, two_way_chain, Component, DistributionCurve,
    GroupInputs, DEFAULT_ORDER,
};
use crate::data::INTERCEPT;
use crate::estimate::{fit_two_step, FitOptions, SelectionDRFit};
use crate::identify::{identify, CellProbabilities};
use crate::inference::{
    decomposition_with_bands, functional_band, quantile_band_by_inversion, uniform_bands, DecompositionKind,
    FunctionalGroup, FunctionalRequest, UniformBand,
};
use crate::model::{quantile_indexes, ModelSpec};
use crate::simulate::{
    calibration_grid, run_monte_carlo, wage_design_config, CovariateSource, HsmDgpConfig, McDesign, McSummary,
    McTarget,
};

pub fn apply_boot(b: &mut BootstrapSection, args: &BootArgs) {
    if let Some(v) = args.bootstrap_b {
        b.draws = v;
    }
    if let Some(v) = args.seed {
        b.seed = v;
    }
    if let Some(v) = args.level {
        b.level = v;
    }
}

/// Config file with command-line overrides applied.
pub fn load_run_config(run: &RunArgs, boot: Option<&BootArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(p) = &run.input {
        cfg.data.input = Some(p.clone());
    }
    if let Some(d) = &run.output_dir {
        cfg.output.dir = d.clone();
    }
    if let Some(g) = &run.grid {
        apply_grid_flag(&mut cfg.model, g)?;
    }
    if let Some(s) = &run.sorting_cols {
        cfg.model.sorting = split_list(s);
    }
    if let Some(g) = &run.group_col {
        cfg.data.group = Some(g.clone());
    }
    if let Some(b) = boot {
        apply_boot(&mut cfg.bootstrap, b);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_taus(s: &str) -> Result<Vec<f64>, CliError> {
    let taus: Vec<f64> = split_list(s)
        .iter()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("cannot parse quantile indexes {s:?}")))?;
    if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(CliError::Config(format!("quantile indexes must lie in (0, 1): {s:?}")));
    }
    Ok(taus)
}

fn model_spec(cfg: &RunConfig, data: &Ingested) -> Result<ModelSpec, CliError> {
    let grid = cfg.model.threshold_grid(&data.pooled_outcomes)?;
    Ok(ModelSpec::new(
        cfg.data.covariates.clone(),
        cfg.data.excluded.clone(),
        cfg.model.sorting.clone(),
        grid,
    )?)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    groups: Vec<GroupSummary>,
    spec: &'a ModelSpec,
    options: FitOptions,
}

#[derive(Serialize)]
struct GroupSummary {
    label: String,
    n: usize,
    selected_share: f64,
    thresholds: usize,
    not_converged: usize,
    skipped: usize,
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Status, CliError> {
    let data = ingest(cfg.input()?, &cfg.data)?;
    let spec = model_spec(cfg, &data)?;
    let opts = FitOptions::default();
    let out = &cfg.output.dir;
    ensure_dir(out)?;
    let mut summary = RunSummary {
        groups: Vec::new(),
        spec: &spec,
        options: opts,
    };
    for (label, obs) in &data.groups {
        log::info!("group {label}: {} units, {} thresholds", obs.len(), spec.grid.len());
        let fit = fit_two_step(obs, &spec, &opts)?;
        for s in &fit.skipped {
            log::warn!("group {label}: threshold {} skipped: {}", s.y, s.reason);
        }
        let not_converged = fit.thresholds.iter().filter(|t| !t.diagnostics.converged).count();
        if not_converged > 0 {
            log::error!("group {label}: {not_converged} thresholds did not converge");
        }
        save_fit(&group_dir(out, label), &fit)?;
        println!(
            "{label}: n = {}, {} thresholds fitted, {} skipped, {} not converged",
            fit.n,
            fit.thresholds.len(),
            fit.skipped.len(),
            not_converged
        );
        summary.groups.push(GroupSummary {
            label: label.clone(),
            n: obs.len(),
            selected_share: obs.selected_share(),
            thresholds: fit.thresholds.len(),
            not_converged,
            skipped: fit.skipped.len(),
        });
    }
    write_json(&out.join("run.json"), &summary)?;
    Ok(if summary.groups.iter().all(|g| g.not_converged == 0) {
        Status::Ok
    } else {
        Status::Incomplete
    })
}

/// Loads a group's fit and checks it against the re-ingested sample.
fn load_group(out: &Path, label: &str, data: Option<&crate::data::ObservationSet>) -> Result<SelectionDRFit, CliError> {
    let fit = load_fit(&group_dir(out, label)).map_err(|e| match e {
        CliError::Io(p, _) => CliError::Artifact(format!("{} is missing; run `seldr estimate` first", p.display())),
        other => other,
    })?;
    if let Some(d) = data {
        if d.len() != fit.n {
            return Err(CliError::Artifact(format!("group {label}: fit has n = {}, data has {}", fit.n, d.len())));
        }
        fit.spec.check_data(d)?;
    }
    Ok(fit)
}

/// `rho` is tanh(δ_intercept) and requires the intercept among the sorting columns.
fn coefficient_contrast(fit: &SelectionDRFit, name: &str) -> Result<(Vec<f64>, bool), CliError> {
    let names = fit.coefficient_names();
    let mut c = vec![0.0; names.len()];
    let (target, mapped) = if name == "rho" {
        (format!("delta:{INTERCEPT}"), true)
    } else {
        (name.to_string(), false)
    };
    let j = names
        .iter()
        .position(|n| *n == target)
        .ok_or_else(|| CliError::Config(format!("unknown coefficient {name}; available: {}", names.join(", "))))?;
    c[j] = 1.0;
    Ok((c, mapped))
}

#[derive(Serialize)]
struct NamedBand<'a> {
    name: &'a str,
    band: &'a UniformBand,
}

fn band_table(grid: &[f64], center: &[f64], lower: &[f64], upper: &[f64], se: &[f64]) -> Table {
    let mut t = Table::new(["y", "center", "lower", "upper", "se"]);
    for j in 0..grid.len() {
        t.push(vec![fmt_f64(grid[j]), fmt_f64(center[j]), fmt_f64(lower[j]), fmt_f64(upper[j]), fmt_f64(se[j])]);
    }
    t
}

fn write_curve(dir: &Path, stem: &str, curve: &DistributionCurve, taus: &[f64]) -> Result<(), CliError> {
    let band = curve.band.as_ref().expect("banded curve");
    band_table(&curve.grid, &curve.values, &band.lower, &band.upper, &band.se).write(&dir.join(format!("{stem}.csv")))?;
    let q = quantile_band_by_inversion(curve, taus)?;
    let mut t = Table::new(["tau", "center", "lower", "upper", "truncated"]);
    for m in 0..taus.len() {
        t.push(vec![
            fmt_f64(taus[m]),
            fmt_f64(q.center[m]),
            fmt_f64(q.lower[m]),
            fmt_f64(q.upper[m]),
            q.truncated[m].to_string(),
        ]);
    }
    t.write(&dir.join(format!("{stem}_quantiles.csv")))?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        curve: &'a DistributionCurve,
        quantiles: &'a crate::inference::QuantileBand,
    }
    write_json(&dir.join(format!("{stem}.json")), &Sidecar { curve, quantiles: &q })
}

pub fn cmd_bands(
    cfg: &RunConfig,
    coefs: &[String],
    functionals: &[FunctionalKind],
    taus: &[f64],
    only: Option<&str>,
) -> Result<Status, CliError> {
    let plan = cfg.bootstrap.plan()?;
    let data = ingest(cfg.input()?, &cfg.data)?;
    let labels: Vec<String> = match only {
        Some(g) if data.group(g).is_none() => return Err(CliError::Config(format!("no group {g}; groups: {}", data.labels().join(", ")))),
        Some(g) => vec![g.to_string()],
        None => data.labels(),
    };
    let out = &cfg.output.dir;
    for label in &labels {
        let obs = data.group(label).expect("listed");
        let fit = load_group(out, label, Some(obs))?;
        let dir = group_dir(out, label).join("bands");
        ensure_dir(&dir)?;

        let names: Vec<String> = if coefs.is_empty() { fit.coefficient_names() } else { coefs.to_vec() };
        let resolved = names.iter().map(|n| coefficient_contrast(&fit, n)).collect::<Result<Vec<_>, _>>()?;
        let contrasts: Vec<Vec<f64>> = resolved.iter().map(|(c, _)| c.clone()).collect();
        let bands = uniform_bands(&fit, &contrasts, &plan)?;
        let bands: Vec<UniformBand> = bands
            .into_iter()
            .zip(&resolved)
            .map(|(b, (_, mapped))| if *mapped { b.mapped(f64::tanh, |v| 1.0 - v.tanh().powi(2)) } else { b })
            .collect();
        for (name, b) in names.iter().zip(&bands) {
            band_table(&b.grid, &b.center, &b.lower, &b.upper, &b.se).write(&dir.join(format!("coef_{}.csv", slug(name))))?;
        }
        let sidecar: Vec<NamedBand> = names.iter().zip(&bands).map(|(name, band)| NamedBand { name, band }).collect();
        write_json(&dir.join("coefficients.json"), &sidecar)?;

        let groups = [FunctionalGroup { label, fit: &fit, data: obs }];
        for kind in functionals {
            let (request, stem) = match kind {
                FunctionalKind::Latent => (FunctionalRequest::Latent { group: 0 }, "latent"),
                FunctionalKind::Observed => (FunctionalRequest::Observed { group: 0 }, "observed"),
            };
            let curve = functional_band(&groups, request, &plan)?;
            write_curve(&dir, stem, &curve, taus)?;
        }
        println!("{label}: {} coefficient bands, {} functional bands in {}", bands.len(), functionals.len(), dir.display());
    }
    Ok(Status::Ok)
}

fn parse_order(s: Option<&str>) -> Result<Vec<Component>, CliError> {
    match s {
        None => Ok(DEFAULT_ORDER.to_vec()),
        Some(s) => split_list(s)
            .iter()
            .map(|c| Component::parse(c).ok_or_else(|| CliError::Config(format!("unknown component {c}"))))
            .collect(),
    }
}

/// Quantile-scale contributions: differences of the inverted chain curves.
fn quantile_contributions(chain: &[DistributionCurve], taus: &[f64]) -> Vec<Vec<f64>> {
    let q: Vec<Vec<f64>> = chain
        .iter()
        .map(|c| {
            let r = rearrange(c);
            taus.iter().map(|&t| quantile_of(&r.grid, &r.values, t).value).collect()
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| if x.is_finite() && y.is_finite() { x - y } else { f64::NAN }).collect()
    };
    let mut out = vec![diff(&q[0], &q[q.len() - 1])];
    out.extend(q.windows(2).map(|w| diff(&w[0], &w[1])));
    out
}

pub fn cmd_decompose(
    cfg: &RunConfig,
    groups: Option<&str>,
    order: Option<&str>,
    mode: DecompositionMode,
    taus: &[f64],
) -> Result<Status, CliError> {
    let plan = cfg.bootstrap.plan()?;
    let data = ingest(cfg.input()?, &cfg.data)?;
    let labels = match groups {
        Some(g) => split_list(g),
        None => data.labels(),
    };
    if labels.len() != 2 {
        return Err(CliError::Config(format!(
            "a decomposition needs exactly two groups; have {} (use --groups FIRST,SECOND)",
            labels.join(", ")
        )));
    }
    let obs: Vec<_> = labels
        .iter()
        .map(|l| data.group(l).ok_or_else(|| CliError::Config(format!("no group {l}"))))
        .collect::<Result<_, _>>()?;
    let out = &cfg.output.dir;
    let fits = [load_group(out, &labels[0], Some(obs[0]))?, load_group(out, &labels[1], Some(obs[1]))?];
    let fg = [
        FunctionalGroup { label: &labels[0], fit: &fits[0], data: obs[0] },
        FunctionalGroup { label: &labels[1], fit: &fits[1], data: obs[1] },
    ];
    let kind = match mode {
        DecompositionMode::Four => DecompositionKind::Four(parse_order(order)?),
        DecompositionMode::Two => DecompositionKind::Two,
    };
    let report = decomposition_with_bands(&fg, &kind, &plan)?;

    let dir = out.join(format!("decompose_{}_vs_{}", slug(&labels[0]), slug(&labels[1])));
    ensure_dir(&dir)?;
    let mut t = Table::new(["component", "y", "value", "lower", "upper", "se"]);
    let total_band = report.total_band.as_ref().expect("banded");
    let rows = std::iter::once(("total", &report.total, total_band))
        .chain(report.components.iter().map(|c| (c.component.name(), &c.values, c.band.as_ref().expect("banded"))));
    for (name, values, band) in rows {
        for j in 0..report.grid.len() {
            t.push(vec![
                name.to_string(),
                fmt_f64(report.grid[j]),
                fmt_f64(values[j]),
                fmt_f64(band.lower[j]),
                fmt_f64(band.upper[j]),
                fmt_f64(band.se[j]),
            ]);
        }
    }
    t.write(&dir.join("components.csv"))?;
    write_json(&dir.join("report.json"), &report)?;

    let inputs = [GroupInputs::from_fit(&labels[0], &fits[0], obs[0]), GroupInputs::from_fit(&labels[1], &fits[1], obs[1])];
    let chain = match &kind {
        DecompositionKind::Two => two_way_chain(&inputs[0], &inputs[1])?,
        DecompositionKind::Four(order) => four_way_chain(&inputs[0], &inputs[1], order)?,
    };
    let qc = quantile_contributions(&chain, taus);
    let mut t = Table::new(["component", "tau", "value"]);
    let names = std::iter::once("total").chain(report.components.iter().map(|c| c.component.name()));
    for (name, vals) in names.zip(&qc) {
        for (tau, v) in taus.iter().zip(vals) {
            t.push(vec![name.to_string(), fmt_f64(*tau), fmt_f64(*v)]);
        }
    }
    t.write(&dir.join("quantiles.csv"))?;

    let emp = employment_decomposition(&inputs[0], &inputs[1])?;
    let mut t = Table::new(["selection_from", "composition_from", "probability"]);
    for (s, ls) in [(1, &labels[0]), (0, &labels[1])] {
        for (k, lk) in [(1, &labels[0]), (0, &labels[1])] {
            t.push(vec![ls.clone(), lk.clone(), fmt_f64(emp.cells[s][k])]);
        }
    }
    t.write(&dir.join("employment.csv"))?;
    write_json(&dir.join("employment.json"), &emp)?;
    println!("decomposition of {} minus {} written to {}", labels[0], labels[1], dir.display());
    Ok(Status::Ok)
}

pub fn cmd_identify(p0: f64, p1: f64, f0: f64, f1: f64, tol: f64) -> Result<String, CliError> {
    let cells = CellProbabilities::new(p0, p1, f0, f1);
    let res = identify(&cells, tol)?;
    serde_json::to_string_pretty(&res).map_err(|e| CliError::Write(PathBuf::from("<stdout>"), e.to_string()))
}

fn parse_target(s: &str) -> Result<McTarget, CliError> {
    if s == "rho" {
        return Ok(McTarget::Rho);
    }
    s.strip_prefix("beta:")
        .map(|c| McTarget::Beta(c.to_string()))
        .ok_or_else(|| CliError::Config(format!("unknown target {s}; use rho or beta:COLUMN")))
}

/// Design described by a simulation config.
pub fn simulation_design(cfg: &SimulationConfig) -> Result<McDesign, CliError> {
    let s = &cfg.simulation;
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Config(format!("simulation.{name} is required for this design")));
    let dgp = match s.design {
        DesignKind::Wage => wage_design_config(s.n, s.seed),
        DesignKind::Gaussian | DesignKind::Binary => HsmDgpConfig {
            beta: s.beta.clone().ok_or_else(|| CliError::Config("simulation.beta is required".into()))?,
            sigma: need(s.sigma, "sigma")?,
            pi: s.pi.clone().ok_or_else(|| CliError::Config("simulation.pi is required".into()))?,
            rho: need(s.rho, "rho")?,
            covariates: if s.design == DesignKind::Gaussian {
                CovariateSource::Gaussian {
                    outcome: s.outcome_dim.unwrap_or(1),
                    excluded: s.excluded_dim.unwrap_or(1),
                }
            } else {
                CovariateSource::BinaryInstrument { p: need(s.p, "p")? }
            },
            n: s.n,
            seed: s.seed,
        },
    };
    dgp.validate()?;
    let taus = quantile_indexes(s.grid_from, s.grid_to, s.grid_step);
    let grid = calibration_grid(&dgp, &taus, s.calibration_n)?;
    let spec = dgp.model_spec(s.sorting.clone(), grid)?;
    Ok(McDesign {
        dgp,
        reps: s.reps,
        plan: cfg.bootstrap.plan()?,
        spec,
        targets: s.targets.iter().map(|t| parse_target(t)).collect::<Result<_, _>>()?,
        fit: FitOptions::default(),
    })
}

#[derive(Serialize)]
struct TableRow<'a> {
    target: &'a str,
    average_length: f64,
    average_critical_value: f64,
    coverage_uniform: f64,
    coverage_pointwise: f64,
    average_se_over_sd: f64,
}

#[derive(Serialize)]
struct McReport<'a> {
    reps: usize,
    completed: usize,
    failures: &'a [crate::simulate::ReplicateFailure],
    table: Vec<TableRow<'a>>,
    heckman_rho_mean: f64,
    heckman_rho_sd: f64,
}

pub fn write_mc(dir: &Path, design: &McDesign, s: &McSummary) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let mut t = Table::new([
        "target", "y", "truth", "mean_estimate", "bias", "sd", "rmse", "rel_bias", "rel_sd", "rel_rmse", "mean_se",
    ]);
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    for tg in &s.targets {
        for j in 0..tg.grid.len() {
            t.push(vec![
                tg.name.clone(),
                fmt_f64(tg.grid[j]),
                fmt_f64(tg.truth[j]),
                fmt_f64(tg.mean_estimate[j]),
                fmt_f64(tg.bias[j]),
                fmt_f64(tg.sd[j]),
                fmt_f64(tg.rmse[j]),
                opt(tg.rel_bias[j]),
                opt(tg.rel_sd[j]),
                opt(tg.rel_rmse[j]),
                fmt_f64(tg.mean_se[j]),
            ]);
        }
    }
    t.write(&dir.join("mc_thresholds.csv"))?;
    let report = McReport {
        reps: s.reps,
        completed: s.completed,
        failures: &s.failures,
        table: s
            .targets
            .iter()
            .map(|t| TableRow {
                target: &t.name,
                average_length: t.avg_band_length,
                average_critical_value: t.avg_cv,
                coverage_uniform: t.coverage_uniform,
                coverage_pointwise: t.coverage_pointwise,
                average_se_over_sd: t.avg_se_over_sd,
            })
            .collect(),
        heckman_rho_mean: s.heckman_rho_mean,
        heckman_rho_sd: s.heckman_rho_sd,
    };
    write_json(&dir.join("mc_summary.json"), &report)?;
    write_json(&dir.join("mc_design.json"), design)
}

pub fn cmd_simulate(cfg: &SimulationConfig) -> Result<Status, CliError> {
    let design = simulation_design(cfg)?;
    let summary = run_monte_carlo(&design)?;
    write_mc(&cfg.output.dir, &design, &summary)?;
    println!("{:<20}{:>10}{:>10}{:>10}{:>10}{:>10}", "target", "length", "cv", "uniform", "pointwise", "se/sd");
    for t in &summary.targets {
        println!(
            "{:<20}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
            t.name, t.avg_band_length, t.avg_cv, t.coverage_uniform, t.coverage_pointwise, t.avg_se_over_sd
        );
    }
    println!("{} of {} replicates completed", summary.completed, summary.reps);
    if summary.failure_rate() > 0.01 {
        log::error!("{} replicates failed", summary.failures.len());
        return Ok(Status::Incomplete);
    }
    Ok(Status::Ok)
}
