//! `rtheta`: plan, simulate, control and stress-test fast transfers of the r-theta manipulator.
//!
//! Exit codes: 0 success, 1 configuration error, 2 planner or solver error, 3 simulation abort.

mod commands;
mod config;
mod error;
mod output;
mod reproduce;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{hex_digest, RunConfig};
use error::CliError;
use output::Provenance;
use reproduce::Figure;

#[derive(Debug, Parser)]
#[command(name = "rtheta", version, about = "Fast point-to-point transfers of a dissipative r-theta manipulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; omitted sections take the nominal scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured integration step (s).
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the configured protocol and simulate it from the designed start.
    Plan,
    /// Shortest polynomial STA duration within the actuator bounds.
    MinTf,
    /// Actuator-bounded minimum-time protocol with costate diagnostics.
    Timeopt,
    /// Simulate the configured protocol from the (offset) start on the configured plant.
    Run,
    /// PID tracking of the protocol's reference trajectory.
    Pid,
    /// Single-shot corrected run of an STA protocol.
    Correct,
    /// Initial-error grid or noise trials.
    Robustness,
    /// Damping scan of a polynomial STA protocol.
    Scan,
    /// Run a built-in experiment recipe.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let dir = &cli.out;
    match &cli.command {
        Command::Plan => commands::plan(&cfg, dir, Provenance::new(cfg.hash())),
        Command::MinTf => commands::min_tf(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Timeopt => commands::timeopt(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Run => commands::run(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Pid => commands::pid(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Correct => commands::correct(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Robustness => commands::robustness(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Scan => commands::scan(&cfg, dir, Provenance::new(cfg.hash())),
        Command::Reproduce { figure } => {
            let recipe = serde_json::to_vec(&json!({ "figure": figure, "config": cfg }))?;
            reproduce::reproduce(*figure, &cfg, dir, Provenance::new(hex_digest(&recipe)))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CliError::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
