use clap::{Parser, Subcommand};
use kinetic_pinn::cli::{cmd_evaluate, cmd_reference, cmd_train, CliOverrides, ModeSelection};
use std::path::PathBuf;
use std::process::ExitCode;

/// Conservative physics-informed neural networks for kinetic equations.
#[derive(Parser)]
#[command(name = "kinetic-pinn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network against the configured kinetic problem.
    Train {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Training mode: unconstrained | penalty | lagrange | augmented |
        /// all (four runs sharing seed and batches).
        #[arg(long)]
        mode: Option<ModeSelection>,
        /// Record the run as reproducible (summation is always ordered).
        #[arg(long)]
        reproducible: bool,
    },
    /// Solve the finite-difference reference and write solution slices.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored checkpoint: conservation traces and error report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seed,
            mode,
            reproducible,
        } => cmd_train(
            &config,
            &CliOverrides {
                out,
                seed,
                mode,
                reproducible,
            },
        ),
        Command::Reference { config, out } => cmd_reference(
            &config,
            &CliOverrides {
                out,
                ..Default::default()
            },
        ),
        Command::Evaluate {
            checkpoint,
            config,
            out,
            seed,
        } => cmd_evaluate(
            &checkpoint,
            &config,
            &CliOverrides {
                out,
                seed,
                ..Default::default()
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code as u8)
        }
    }
}
