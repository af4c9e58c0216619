//! Command-line front end for the `seldr` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod ingest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::counterfactual::CounterfactualError;
use crate::data::DataError;
use crate::estimate::EstimateError;
use crate::identify::IdentifyError;
use crate::inference::InferenceError;
use crate::model::ModelError;
use crate::simulate::SimulationError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {message}", if column.is_empty() { format!("line {line}") } else { format!("line {line}, column {column}") })]
    Parse { line: usize, column: String, message: String },
    #[error("selected rows without an outcome at lines {}", fmt_lines(lines))]
    MissingOutcome { lines: Vec<usize> },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("writing {0}: {1}")]
    Write(PathBuf, String),
    #[error("fit artifacts: {0}")]
    Artifact(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

fn fmt_lines(lines: &[usize]) -> String {
    let shown: Vec<String> = lines.iter().take(20).map(|l| l.to_string()).collect();
    if lines.len() > 20 {
        format!("{} and {} more", shown.join(", "), lines.len() - 20)
    } else {
        shown.join(", ")
    }
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }
}

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Results were written, but some part did not converge or too many
    /// replicates failed.
    Incomplete,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Incomplete => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seldr", version, about = "Distribution regression with endogenous sample selection")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// -v for info, -vv for debug logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// `q:FROM:TO:STEP` (quantile indexes of pooled selected outcomes) or a comma list of thresholds.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma list of sorting columns.
    #[arg(long)]
    pub sorting_cols: Option<String>,
    #[arg(long)]
    pub group_col: Option<String>,
}

#[derive(Debug, Args)]
pub struct BootArgs {
    #[arg(long)]
    pub bootstrap_b: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionalKind {
    Latent,
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecompositionMode {
    /// Observed distribution: sorting, selection structure, outcome structure, composition.
    Four,
    /// Latent distribution: structure and composition.
    Two,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the two-step model per group and write the fit artifacts.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Uniform bands for coefficients and distribution functionals.
    Bands {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        boot: BootArgs,
        /// Coefficient name such as beta:x1, delta:intercept, or rho; repeatable. Default: all.
        #[arg(long = "coef")]
        coefs: Vec<String>,
        /// Distribution functional to band; repeatable.
        #[arg(long, value_enum)]
        functional: Vec<FunctionalKind>,
        /// Comma list of quantile indexes for inverted quantile bands.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        taus: String,
        /// Restrict to one group label.
        #[arg(long)]
        group: Option<String>,
    },
    /// Counterfactual decomposition between two groups.
    Decompose {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        boot: BootArgs,
        /// Comma list `FIRST,SECOND`; the difference is FIRST minus SECOND.
        #[arg(long)]
        groups: Option<String>,
        /// Extraction order, e.g. sorting,selection_structure,outcome_structure,composition.
        #[arg(long)]
        order: Option<String>,
        #[arg(long, value_enum, default_value = "four")]
        kind: DecompositionMode,
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        taus: String,
    },
    /// Identify (μ, ρ) from Pr(D=1|z) and F(y, 1|z) at z = 0, 1.
    Identify {
        #[arg(long, allow_negative_numbers = true)]
        p0: f64,
        #[arg(long, allow_negative_numbers = true)]
        p1: f64,
        #[arg(long, allow_negative_numbers = true)]
        f0: f64,
        #[arg(long, allow_negative_numbers = true)]
        f1: f64,
        #[arg(long, default_value_t = crate::identify::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Monte Carlo coverage study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        boot: BootArgs,
    },
}

/// Runs one parsed command; the thread pool is the caller's business.
pub fn run(cli: &Cli) -> Result<Status, CliError> {
    match &cli.command {
        Command::Estimate { run } => commands::cmd_estimate(&commands::load_run_config(run, None)?),
        Command::Bands {
            run,
            boot,
            coefs,
            functional,
            taus,
            group,
        } => {
            let cfg = commands::load_run_config(run, Some(boot))?;
            commands::cmd_bands(&cfg, coefs, functional, &commands::parse_taus(taus)?, group.as_deref())
        }
        Command::Decompose {
            run,
            boot,
            groups,
            order,
            kind,
            taus,
        } => {
            let cfg = commands::load_run_config(run, Some(boot))?;
            commands::cmd_decompose(&cfg, groups.as_deref(), order.as_deref(), *kind, &commands::parse_taus(taus)?)
        }
        Command::Identify { p0, p1, f0, f1, tolerance } => {
            let json = commands::cmd_identify(*p0, *p1, *f0, *f1, *tolerance)?;
            println!("{json}");
            Ok(Status::Ok)
        }
        Command::Simulate {
            config,
            output_dir,
            reps,
            n,
            boot,
        } => {
            let mut cfg = config::SimulationConfig::load(config)?;
            if let Some(d) = output_dir {
                cfg.output.dir = d.clone();
            }
            if let Some(r) = reps {
                cfg.simulation.reps = *r;
            }
            if let Some(n) = n {
                cfg.simulation.n = *n;
            }
            commands::apply_boot(&mut cfg.bootstrap, boot);
            commands::cmd_simulate(&cfg)
        }
    }
}
