//! `stolqr` — batch front-end for stochastic LQR synthesis.
//!
//! Five subcommands share one JSON configuration file: `riccati`
//! (ground-truth fixed point), `model-based` (SDP from the system
//! matrices), `model-free` (SDP from sampled rollouts), and the two
//! experiment reproductions `exp-residuals` / `exp-trajectories` which
//! emit plot-ready CSVs.  `STOLQR_THREADS` caps worker parallelism.
//!
//! Exit codes: 0 success, 1 solver or numerical failure, 2 configuration
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stolqr::Error;

#[derive(Parser)]
#[command(name = "stolqr", version, about = "Stochastic LQR synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data-collection master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV artifacts (default: config `output_dir`,
    /// then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the generalized Riccati equation (model-based ground truth).
    Riccati(CommonArgs),
    /// Synthesize the optimal gain from the system matrices via SDP.
    ModelBased(CommonArgs),
    /// Synthesize a gain from sampled rollouts alone via SDP.
    ModelFree(CommonArgs),
    /// Sweep dataset sizes and write per-run residuals to residuals.csv.
    ExpResiduals(CommonArgs),
    /// Average collected rollouts, continue them closed-loop, write
    /// trajectories.csv.
    ExpTrajectories(CommonArgs),
}

fn run(cli: &Cli) -> Result<String, Error> {
    let (Command::Riccati(args)
    | Command::ModelBased(args)
    | Command::ModelFree(args)
    | Command::ExpResiduals(args)
    | Command::ExpTrajectories(args)) = &cli.command;
    let cfg = config::load_config(&args.config)?;
    let out_dir = commands::resolve_out_dir(&cfg, args.out.clone());
    match &cli.command {
        Command::Riccati(_) => commands::cmd_riccati(&cfg),
        Command::ModelBased(_) => commands::cmd_model_based(&cfg),
        Command::ModelFree(_) => commands::cmd_model_free(&cfg, args.seed),
        Command::ExpResiduals(_) => commands::cmd_exp_residuals(&cfg, args.seed, &out_dir),
        Command::ExpTrajectories(_) => commands::cmd_exp_trajectories(&cfg, args.seed, &out_dir),
    }
}

fn main() -> ExitCode {
    stolqr::exec::init_thread_pool();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::DimensionMismatch { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
