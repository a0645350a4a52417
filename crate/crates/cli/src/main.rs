//! Command-line front end: mesh generation, forward runs, reconstructions,
//! twin experiments, replicate statistics and L-curves.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, missing or malformed files. Exit code 1.
    Input(String),
    /// Non-convergence, divergent current normalisation and similar. Exit code 2.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<gsrecon::Error> for CliError {
    fn from(e: gsrecon::Error) -> Self {
        use gsrecon::Error as E;
        match e {
            E::Convergence { .. }
            | E::DivergentLambda { .. }
            | E::Regularization(_)
            | E::Factorization(_)
            | E::NoPlasma(_)
            | E::DegeneratePlasma(_)
            | E::EmptySource
            | E::OpenContour(_)
            | E::DegenerateSurface(_)
            | E::NonphysicalProfile(_)
            | E::EmptyStats(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsrecon", version, about = "Free-boundary equilibrium reconstruction")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, `key=value`; repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured mesh to `mesh.txt`.
    MeshGen,
    /// Direct problem with prescribed profiles.
    Forward,
    /// Identify A, B (and n_e) from a measurement file.
    Reconstruct {
        #[arg(long, short)]
        measurements: PathBuf,
        /// Stop after `realtime_iterations` iterations.
        #[arg(long)]
        realtime: bool,
        /// Equilibrium file of a previous reconstruction.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Reference equilibrium, synthetic data, one reconstruction.
    Twin,
    /// Replicate statistics over the configured weights.
    Stats {
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// L-curves of the density and the A/B identification.
    Lcurve,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::MeshGen => commands::mesh_gen(&cfg),
        Command::Forward => commands::forward(&cfg),
        Command::Reconstruct {
            measurements,
            realtime,
            warm_start,
        } => commands::reconstruct(&cfg, measurements, *realtime, warm_start.as_deref()),
        Command::Twin => commands::twin(&cfg),
        Command::Stats { jobs } => {
            if *jobs == Some(0) {
                return Err(CliError::Input("--jobs must be at least 1".into()));
            }
            commands::stats(&cfg, *jobs)
        }
        Command::Lcurve => commands::lcurve(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsrecon: {e}");
            ExitCode::from(e.code())
        }
    }
}
