//! `rgpe`: ground states of rotating Bose-Einstein condensates.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 convergence
//! failure, 4 invariant failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rgpe_cli::commands;
use rgpe_cli::config::{Overrides, RunConfig, KEYS};
use rgpe_cli::error::CliError;

#[derive(Parser)]
#[command(name = "rgpe", version, about = "Energy-adaptive Riemannian gradient solver for rotating condensates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gradient method and write trace.csv, final_state.gpst and summary.txt.
    Solve(Common),
    /// Run the adaptive-metric and H1-metric methods from the same start.
    Compare(Common),
    /// Spectral diagnostics of a converged state.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Converged state file.
        #[arg(long)]
        state: PathBuf,
    },
    /// Contraction rates of a run against a reference state.
    Rates {
        #[command(flatten)]
        common: Common,
        /// Reference ground state file.
        #[arg(long)]
        state: PathBuf,
    },
    /// Invariant battery on a short run.
    Check(Common),
    /// List the configuration keys.
    Keys,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed step size; implies the fixed policy.
    #[arg(long)]
    tau: Option<f64>,
    /// Step policy: adaptive or fixed.
    #[arg(long)]
    policy: Option<String>,
    /// Subdivisions per side.
    #[arg(long)]
    mesh_n: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every iterate (needed for rates).
    #[arg(long)]
    retain_states: bool,
    /// Fail when the trapping condition does not hold.
    #[arg(long)]
    strict_admissibility: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for assembly and mat-vecs.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write SVG line plots.
    #[arg(long)]
    svg: bool,
    /// Permit meshes finer than 128 subdivisions.
    #[arg(long)]
    large_mesh: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            tau: self.tau,
            policy: self.policy.clone(),
            mesh_n: self.mesh_n,
            max_iters: self.max_iters,
            out: self.out.clone(),
            retain_states: self.retain_states,
            strict_admissibility: self.strict_admissibility,
            seed: self.seed,
            threads: self.threads,
            svg: self.svg,
            large_mesh: self.large_mesh,
        })?;
        if let Some(t) = cfg.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Config(format!("cannot configure {t} threads: {e}")))?;
        }
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(c) => commands::cmd_solve(&c.resolve()?),
        Command::Compare(c) => commands::cmd_compare(&c.resolve()?),
        Command::Spectrum { common, state } => commands::cmd_spectrum(&common.resolve()?, &state),
        Command::Rates { common, state } => commands::cmd_rates(&common.resolve()?, &state),
        Command::Check(c) => commands::cmd_check(&c.resolve()?),
        Command::Keys => {
            for (k, d) in KEYS {
                println!("{k:<30} {d}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
