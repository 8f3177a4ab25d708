//! Experiment harness for `pubmech`: TOML configs, one subcommand per solver
//! or evaluator, and seeded CSV output.

pub mod commands;
pub mod config;
pub mod error;
pub mod resolve;
pub mod tables;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{Artifact, RunOutput};
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pubmech", version, about = "Mechanism design experiments for binary public projects")]
pub struct Cli {
    /// TOML experiment config (all fields optional).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory for CSV files [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Monte Carlo objective of a mechanism.
    Evaluate {
        /// Mechanism kind; overrides `mechanism.kind`.
        mechanism: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve a dynamic program (`dp.solver`).
    SolveDp {
        /// unanimous | upper-bound | one-directional
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        h: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Genetic search over sequences, AMA curves or redistribution functions.
    Evolve {
        /// sequences | curves | redistribution
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Strategy-proofness, individual rationality and budget checks.
    Check {
        mechanism: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reproduce a named results table.
    Table {
        /// ch3-twopeak | ch3-ub | ch4-delays | ch5-expectation | ch6-revenue
        preset: String,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub objective: Option<String>,
    /// Prior as `family:p1,p2,...`, e.g. `beta:0.5,0.5`.
    #[arg(long)]
    pub prior: Option<String>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(n) = self.n {
            c.n = n;
        }
        if let Some(s) = self.samples {
            c.samples = s;
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(o) = &self.objective {
            c.objective = Some(o.clone());
        }
        if let Some(p) = &self.prior {
            let (family, params) = p.split_once(':').unwrap_or((p.as_str(), ""));
            let params = params
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::config("--prior".into(), None, format!("bad parameter in '{p}': {e}")))?;
            c.prior.family = family.to_string();
            c.prior.params = params;
            c.prior.support = None;
        }
        Ok(())
    }
}

impl Cli {
    /// Loads the config and applies command-line overrides.
    pub fn load(&self) -> Result<LoadedConfig, CliError> {
        let mut lc = match &self.config {
            Some(path) => LoadedConfig::load(path)?,
            None => LoadedConfig::default(),
        };
        let c = &mut lc.config;
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(out) = &self.out {
            c.out = Some(out.clone());
        }
        if let Some(t) = self.threads {
            c.threads = Some(t);
        }
        match &self.command {
            Command::Evaluate { overrides, .. } | Command::Check { overrides, .. } => overrides.apply(c)?,
            Command::SolveDp { solver, h, overrides } => {
                overrides.apply(c)?;
                if let Some(s) = solver {
                    c.dp.solver = s.clone();
                }
                if let Some(h) = h {
                    c.dp.h = *h;
                }
            }
            Command::Evolve { target, overrides } => {
                overrides.apply(c)?;
                if let Some(t) = target {
                    c.ga.target = t.clone();
                }
            }
            Command::Table { .. } => {}
        }
        if c.threads == Some(0) {
            return Err(lc.invalid(None, "threads", "threads must be positive"));
        }
        Ok(lc)
    }
}

/// Subcommand name plus its positional argument; part of the config hash.
pub fn command_label(cmd: &Command) -> String {
    match cmd {
        Command::Evaluate { mechanism, .. } => format!("evaluate {}", mechanism.as_deref().unwrap_or("")),
        Command::SolveDp { .. } => "solve-dp".into(),
        Command::Evolve { .. } => "evolve".into(),
        Command::Check { mechanism, .. } => format!("check {}", mechanism.as_deref().unwrap_or("")),
        Command::Table { preset } => format!("table {preset}"),
    }
}

/// Runs a subcommand without touching the filesystem (beyond input files).
pub fn run_command(cmd: &Command, lc: &LoadedConfig) -> Result<RunOutput, CliError> {
    match cmd {
        Command::Evaluate { mechanism, .. } => commands::evaluate(lc, mechanism.as_deref()),
        Command::SolveDp { .. } => commands::solve_dp(lc),
        Command::Evolve { .. } => commands::evolve(lc),
        Command::Check { mechanism, .. } => commands::check(lc, mechanism.as_deref()),
        Command::Table { preset } => tables::run(lc, preset),
    }
}

/// An artifact as written to disk: provenance line, then the CSV.
pub fn render(artifact: &Artifact, hash: &str, seed: u64) -> String {
    format!("# config_hash={hash},seed={seed}\n{}", artifact.body)
}

/// Runs the command line end to end and returns the files written.
pub fn execute(cli: &Cli) -> Result<(RunOutput, Vec<PathBuf>), CliError> {
    let lc = cli.load()?;
    if let Some(t) = lc.config.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let output = run_command(&cli.command, &lc)?;
    let hash = lc.config.hash(&command_label(&cli.command));
    let dir = lc.config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
    let mut written = Vec::new();
    for a in &output.artifacts {
        let path = dir.join(&a.name);
        write(&path, &render(a, &hash, lc.config.seed))?;
        written.push(path);
    }
    if output.violations > 0 {
        return Err(CliError::Violations { count: output.violations, report: dir.join("check_violations.csv") });
    }
    Ok((output, written))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}
