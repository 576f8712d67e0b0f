//! `duct-pinn`: train, sweep, dump closed-form fields and self-check the
//! duct acoustics PINN solver.
//!
//! The number of worker threads is taken from `DUCT_PINN_THREADS`
//! (default: all cores). Results do not depend on it.

mod commands;
mod config;
mod output;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

pub const THREADS_ENV: &str = "DUCT_PINN_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<duct_pinn::Error> for CliError {
    fn from(e: duct_pinn::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "duct-pinn", version, about = "Physics-informed neural network solver for duct acoustics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network seed (overrides `network.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frequency in Hz (overrides `problem.frequency`).
    #[arg(long)]
    freq: Option<f64>,
    /// Mach number (overrides `problem.mach`).
    #[arg(long)]
    mach: Option<f64>,
}

impl CommonArgs {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            freq: self.freq,
            mach: self.mach,
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the pressure (and velocity) networks for one configuration.
    Solve(CommonArgs),
    /// Run one solve per frequency or per Mach number.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated frequencies in Hz (overrides `sweep.frequencies`).
        #[arg(long, value_delimiter = ',', conflicts_with = "machs")]
        freqs: Option<Vec<f64>>,
        /// Comma-separated Mach numbers (overrides `sweep.machs`).
        #[arg(long, value_delimiter = ',')]
        machs: Option<Vec<f64>>,
    },
    /// Write the closed-form fields in the solve CSV schema.
    Oracle(CommonArgs),
    /// Run the built-in invariant checks.
    Validate {
        /// Corrupt one check's input to confirm the check can fail.
        #[arg(long, value_enum)]
        inject_fault: Option<validate::Fault>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve(args) => {
            let cfg = args.config()?;
            let dir = cfg.output.directory.clone();
            let outcome = commands::solve(&cfg, &dir, true)?;
            println!("{}", outcome.summary_line());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, freqs, machs } => {
            let mut cfg = common.config()?;
            if let Some(f) = freqs {
                cfg.sweep.frequencies = f;
                cfg.sweep.machs.clear();
            }
            if let Some(m) = machs {
                cfg.sweep.machs = m;
                cfg.sweep.frequencies.clear();
            }
            let axis = commands::SweepAxis::from_config(&cfg)?;
            let dir = cfg.output.directory.clone();
            let failed = commands::sweep(&cfg, &axis, &dir)?;
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Oracle(args) => {
            let cfg = args.config()?;
            let path = commands::oracle_dump(&cfg, &cfg.output.directory)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { inject_fault } => {
            let ok = validate::run(inject_fault);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("duct-pinn: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
