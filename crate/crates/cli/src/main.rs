mod config;
mod eval;
mod exit;
mod plot;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::CliResult;

#[derive(Parser)]
#[command(name = "air", version, about = "Value-decomposition MARL with identity-driven adaptive exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and/or flags; outputs go to a fresh run directory.
    Train {
        /// TOML config; keys mirror the training config, `[env]` is required unless --env is given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// climb, penalty, spread, or a path to a tabular spec.
        #[arg(long)]
        env: Option<String>,
        /// qmix or vdn.
        #[arg(long)]
        mixer: Option<String>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// on, off or classifier_only.
        #[arg(long)]
        air: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (default: $AIR_RUN_DIR/<timestamp> or ./runs/<timestamp>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Key/value report path (default: <checkpoint>.eval.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the exact information-identity checks.
    Verify {
        /// Tabular spec file; the built-in fixtures are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Write a key/value report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw metrics columns as an SVG line chart.
    Plot {
        /// metrics.csv written by `train`.
        metrics: PathBuf,
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long, default_value = "metrics.svg")]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config: path,
            env,
            mixer,
            steps,
            seed,
            air,
            workers,
            out,
            quiet,
        } => {
            let overrides = config::Overrides {
                env,
                mixer,
                steps,
                seed,
                air,
                workers,
            };
            let cfg = config::load(path.as_deref(), &overrides)?;
            train::cmd_train(cfg, out, quiet).map(drop)
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            out,
        } => eval::cmd_eval(&checkpoint, &env, episodes, seed, out).map(drop),
        Command::Verify { spec, report } => verify::cmd_verify(spec.as_deref(), report).map(drop),
        Command::Plot { metrics, columns, out } => plot::cmd_plot(&metrics, &columns, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::VALIDATION } else { exit::SUCCESS });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
