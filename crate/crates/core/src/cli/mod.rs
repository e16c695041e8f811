//! Command-line front end: tracking, evaluation, scorer training and
//! synthetic-sequence generation.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cftrack",
    version,
    about = "Coarse-to-fine single-object tracker"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one sequence, or every sequence in a dataset directory.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sequence directory (img/ plus groundtruth_rect.txt) or a directory of them.
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides tracker.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score result documents against a dataset's ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where eval.json and curves.csv go; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the fine-stage scorer head on annotated sequences.
    TrainScorer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output head file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a synthetic sequence in the OTB directory layout.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default run configuration.
    Config,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track {
            config,
            seq,
            out,
            seed,
        } => {
            let mut c = RunConfig::load(config.as_deref())?;
            if let Some(s) = seed {
                c.tracker.seed = s;
            }
            commands::track(&c, &seq, &out)
        }
        Command::Eval {
            results,
            data,
            out,
            config,
        } => {
            let c = RunConfig::load(config.as_deref())?;
            commands::eval(&c, &results, &data, out.as_deref().unwrap_or(&results))
        }
        Command::TrainScorer {
            config,
            data,
            out,
            seed,
        } => {
            let mut c = RunConfig::load(config.as_deref())?;
            if let Some(s) = seed {
                c.tracker.seed = s;
            }
            commands::train_scorer(&c, &data, &out)
        }
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Config => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}
