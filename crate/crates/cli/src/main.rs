//! Command-line driver: simulate | equilibria | decay | quasistab |
//! dimension | audit over a strict TOML run configuration.
//!
//! Exit codes: 0 success, 2 validation failure, 3 blow-up (with
//! --fail-on-blowup), 4 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::{CmdError, Ctx};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "modalpde", version, about = "Spectral-Galerkin simulation and long-time analysis of dissipative waves and plates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for reports and tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override (defaults to the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for ensemble jobs (defaults to the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit with code 3 when a trajectory blows up.
    #[arg(long, global = true, default_value_t = false)]
    fail_on_blowup: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured model and write energy series, snapshots
    /// and the audit report.
    Simulate,
    /// Enumerate stationary states by multistart Newton.
    Equilibria,
    /// Convergence-to-equilibrium run with the decay-envelope fit.
    Decay,
    /// Trajectory-pair quasi-stability fits and stabilizability audits.
    Quasistab,
    /// Box-counting dimension of an attractor sample or fixture.
    Dimension,
    /// Energy and identity audits at dt and dt/2.
    Audit,
}

fn run(cli: &Cli) -> Result<(), CmdError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CmdError::Validation("--config PATH is required".into()))?;
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| CmdError::Validation("--out DIR is required".into()))?;
    let raw = std::fs::read(config_path)
        .map_err(|e| CmdError::Validation(format!("cannot read config: {e}")))?;
    let config = RunConfig::parse(
        std::str::from_utf8(&raw)
            .map_err(|e| CmdError::Validation(format!("config is not UTF-8: {e}")))?,
    )
    .map_err(CmdError::Validation)?;

    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let ctx = Ctx {
        config: &config,
        out,
        seed: cli.seed.unwrap_or(config.seed),
        fail_on_blowup: cli.fail_on_blowup,
        config_hash: output::sha256_hex(&raw),
    };
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Equilibria => commands::cmd_equilibria(&ctx),
        Command::Decay => commands::cmd_decay(&ctx),
        Command::Quasistab => commands::cmd_quasistab(&ctx),
        Command::Dimension => commands::cmd_dimension(&ctx),
        Command::Audit => commands::cmd_audit(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Blowup { time }) => {
            eprintln!("blow-up detected at t = {time}");
            ExitCode::from(3)
        }
        Err(CmdError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(4)
        }
    }
}
