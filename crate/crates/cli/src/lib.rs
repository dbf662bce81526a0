//! Command-line front end for `iph-core`.

pub mod builtins;
pub mod commands;
pub mod schema;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use commands::{Method, Outcome, PassivityArgs, SimulateArgs, WiringArg};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "iph", version, about = "Incrementally port-Hamiltonian systems: checks, simulation, composition, equilibria")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monotonicity, cyclic monotonicity and linear classification of a relation.
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 6)]
        max_cycle: usize,
        #[arg(long, env = "IPH_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Integrates an explicit system and writes the trajectory CSV.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long)]
        dt: Option<f64>,
        /// rk4 or prox; defaults to rk4 for smooth systems.
        #[arg(long)]
        method: Option<Method>,
        /// Comma-separated initial state; defaults to zero.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Composes two descriptions through a shared port.
    Compose {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, default_value = "canonical")]
        wiring: WiringArg,
        #[arg(long, default_value = "p")]
        port: String,
    },
    /// Solves a network equilibrium problem.
    Steady { file: PathBuf },
    /// Incremental and differential passivity along random trajectory pairs.
    Passivity {
        file: PathBuf,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-2)]
        dt: f64,
        #[arg(long, env = "IPH_SEED", default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let load = |p: &PathBuf| builtins::load(p);
    match cli.command {
        Command::Check { file, samples, max_cycle, seed } => commands::check(&load(&file)?, samples, max_cycle, seed),
        Command::Simulate { file, t_end, dt, method, x0, out } => {
            let (outcome, csv) = commands::simulate(&load(&file)?, &SimulateArgs { t_end, dt, method, x0 })?;
            if let Some(path) = out {
                std::fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()))?;
            }
            Ok(outcome)
        }
        Command::Compose { file_a, file_b, wiring, port } => {
            commands::compose_files(&load(&file_a)?, &load(&file_b)?, wiring, &port)
        }
        Command::Steady { file } => commands::steady(&load(&file)?),
        Command::Passivity { file, pairs, t_end, dt, seed } => {
            commands::passivity_cmd(&load(&file)?, &PassivityArgs { pairs, t_end, dt, seed })
        }
    }
}
