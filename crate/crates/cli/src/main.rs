//! `mtens`: train base encoders, extract their representations, train the
//! ensemble and score prediction files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtens_core::{Block, EncoderKind, Error};

use commands::{EnsembleSources, FeatureInput, Subset};
use config::RunArgs;

#[derive(Debug, Parser)]
#[command(
    name = "mtens",
    version,
    about = "Multi-task emotion and sentiment ensemble"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one multi-task encoder; writes <encoder>.ckpt and <encoder>.history.tsv.
    TrainBase {
        #[arg(long)]
        encoder: EncoderKind,
    },
    /// Dump the 128-wide shared activations of a trained encoder to <encoder>.reps.tsv.
    Extract {
        #[arg(long)]
        encoder: EncoderKind,
        /// Defaults to <out>/<encoder>.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
    },
    /// Train the stacked ensemble on the three representation dumps and a feature block.
    TrainEnsemble {
        /// Defaults to <out>/lstm.reps.tsv.
        #[arg(long)]
        lstm_reps: Option<PathBuf>,
        #[arg(long)]
        cnn_reps: Option<PathBuf>,
        #[arg(long)]
        gru_reps: Option<PathBuf>,
        /// Precomputed feature TSV; computed from the data, embeddings and lexicons when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "raw")]
        feature_input: FeatureInput,
        /// Also train one single-task ensemble per task with the same budget.
        #[arg(long)]
        compare_single: bool,
        /// Add the dependent intensity correlation to the report.
        #[arg(long)]
        dependent: bool,
    },
    /// Score an `id<TAB>task<TAB>value` prediction file against a dataset file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Gold dataset; defaults to --data.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        dependent: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Parameter(_) | Error::Io { .. } => 2,
        Error::NumericFailure { .. } => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> mtens_core::Result<String> {
    let args = cli.run.merged()?;
    match cli.command {
        Command::TrainBase { encoder } => commands::train_base(&args, encoder),
        Command::Extract {
            encoder,
            checkpoint,
            subset,
        } => commands::extract(&args, encoder, checkpoint.as_deref(), subset),
        Command::TrainEnsemble {
            lstm_reps,
            cnn_reps,
            gru_reps,
            features,
            feature_input,
            compare_single,
            dependent,
        } => {
            let sources = EnsembleSources {
                reps: [
                    (Block::Lstm, lstm_reps),
                    (Block::Cnn, cnn_reps),
                    (Block::Gru, gru_reps),
                ],
                features,
                feature_input,
            };
            commands::train_ensemble(&args, &sources, compare_single, dependent)
        }
        Command::Evaluate {
            predictions,
            gold,
            dependent,
        } => commands::evaluate_files(&args, &predictions, gold.as_deref(), dependent),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
