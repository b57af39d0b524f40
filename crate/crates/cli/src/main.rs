//! `cascade`: train, evaluate and sweep halting cascades from flat config files.

mod commands;
mod config;
mod manifest;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{Context, Grid};
use crate::config::Overrides;

#[derive(Parser)]
#[command(name = "cascade", version, about = "Train and evaluate learned halting cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long, env = "CASCADE_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "CASCADE_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "CASCADE_OUT")]
    out: PathBuf,
    /// Overrides the number of cascade stages.
    #[arg(long, env = "CASCADE_STAGES")]
    stages: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Learned,
    Single,
    Average,
    Woc,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Train a cascade stage by stage and save checkpoints.
    Train(RunArgs),
    /// Evaluate a checkpoint on the configured split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint directory written by `train`.
        #[arg(long, env = "CASCADE_CHECKPOINT")]
        checkpoint: PathBuf,
        /// Method to evaluate.
        #[arg(long, value_enum, default_value = "all", env = "CASCADE_METHOD")]
        method: Method,
        /// Fixed confidence threshold for `woc`; searched on validation otherwise.
        #[arg(long, env = "CASCADE_THRESHOLD")]
        threshold: Option<f64>,
        /// Pool checkpoint that anchors utility calibration instead of the evaluated models.
        #[arg(long, env = "CASCADE_ANCHORS")]
        anchors: Option<PathBuf>,
    },
    /// Train an independent pool and evaluate the non-learned methods.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        /// Method to evaluate.
        #[arg(long, value_enum, default_value = "all", env = "CASCADE_METHOD")]
        method: Method,
        #[arg(long, env = "CASCADE_THRESHOLD")]
        threshold: Option<f64>,
    },
    /// Sweep `cost=a,b,..`, `stages=1,2,..` or `threshold[=a,b,..]`.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, env = "CASCADE_GRID")]
        grid: Grid,
    },
    /// Render plots and a markdown summary from the tables in a run directory.
    Report {
        #[arg(long, env = "CASCADE_OUT")]
        out: PathBuf,
    },
}

impl RunArgs {
    fn context(self, command: &str) -> anyhow::Result<Context> {
        let overrides = Overrides {
            seed: self.seed,
            stages: self.stages,
        };
        Context::new(command, self.config, overrides, self.out)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(run) => commands::train(&run.context("train")?),
        Command::Eval {
            run,
            checkpoint,
            method,
            threshold,
            anchors,
        } => commands::eval(&run.context("eval")?, &checkpoint, method, threshold, anchors.as_deref()),
        Command::Baseline { run, method, threshold } => commands::baseline(&run.context("baseline")?, method, threshold),
        Command::Sweep { run, grid } => commands::sweep(&run.context("sweep")?, &grid),
        Command::Report { out } => report::report(&out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
