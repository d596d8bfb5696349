//! Configuration-driven front end: every subcommand reads one INI config and
//! writes CSV data, a gnuplot script and a JSON run manifest.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{CliError, Report, RunContext};
pub use config::{ConfigError, ExperimentConfig, Mode};

#[derive(Debug, Parser)]
#[command(name = "tnt", version, about = "Twist-and-turn spin squeezing simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// INI config; mode defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: `run.output_dir`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding `run.master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "TNT_THREADS")]
    pub threads: Option<usize>,
    /// Simulation mode, overriding `run.mode`.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Squeezing versus evolution time.
    SqueezeSweep,
    /// Tomography scan at one evolution time.
    Tomography {
        /// Evolution time, overriding `tomography.time_ms`.
        #[arg(long)]
        time_ms: Option<f64>,
    },
    /// Classical phase portrait and fixed points.
    Classical,
    /// Array scaling with summed atom number.
    Scaling,
    /// Squeezing after a fixed time for several atom numbers.
    Ndep,
    /// Raw trajectory-ensemble moments.
    Ensemble,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    /// Commands that run trajectory ensembles use all cores by default.
    fn runs_ensembles(&self, mode: Mode) -> bool {
        match self {
            Command::Ensemble => true,
            Command::SqueezeSweep | Command::Tomography { .. } | Command::Ndep => mode != Mode::Ideal,
            _ => false,
        }
    }
}

/// Resolves the configuration and flags.
pub fn resolve(cli: &Cli) -> Result<RunContext, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.mode)?,
        None => {
            let c = ExperimentConfig::defaults(cli.mode.unwrap_or(Mode::Ideal));
            c.validate().map_err(|(key, msg)| ConfigError::Value { line: None, key: key.into(), msg })?;
            c
        }
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if cli.threads == Some(0) {
        return Err(ConfigError::Value { line: None, key: "--threads".into(), msg: "must be at least 1".into() }.into());
    }
    let threads = cli.threads.unwrap_or_else(|| {
        if cli.command.runs_ensembles(config.mode) {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            1
        }
    });
    let out_dir = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunContext { config, out_dir, threads })
}

/// Runs one command. `Command::Config` returns the resolved text in the
/// summary without writing files.
pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let ctx = resolve(cli)?;
    if let Command::Config = cli.command {
        return Ok(Report { command: "config".into(), summary: vec![ctx.config.to_ini()], ..Default::default() });
    }
    // the global pool may already exist when called more than once
    let _ = rayon::ThreadPoolBuilder::new().num_threads(ctx.threads).build_global();
    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    match &cli.command {
        Command::SqueezeSweep => commands::squeeze_sweep(&ctx),
        Command::Tomography { time_ms } => commands::tomography(&ctx, *time_ms),
        Command::Classical => commands::classical(&ctx),
        Command::Scaling => commands::scaling(&ctx),
        Command::Ndep => commands::ndep(&ctx),
        Command::Ensemble => commands::ensemble(&ctx),
        Command::Config => unreachable!(),
    }
}
