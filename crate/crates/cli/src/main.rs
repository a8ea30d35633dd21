//! Command-line front end: configs, datasets and teachers in, children,
//! checkpoints and reports out.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adanas::ErrorCategory;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adanas", version, about = "Compress a teacher classifier into a small CNN by differentiable architecture search")]
#[command(after_help = "Log verbosity is read from ADANAS_LOG (error, warn, info, debug, trace; default info).")]
struct Cli {
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Each one overrides the matching value of
/// the `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML run configuration [default: built-in defaults]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, probes, search and retraining [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset TSV with columns id, text (or text_a, text_b), label, split
    #[arg(long, global = true, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Teacher file (JSON lines interchange format)
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "synthetic_teacher")]
    pub teacher: Option<PathBuf>,
    /// Synthetic teacher spec such as J=6,H=32,seed=0 [defaults: J=6, H=32, epochs=60, lr=0.01]
    #[arg(long, global = true, value_name = "SPEC")]
    pub synthetic_teacher: Option<String>,
    /// Efficiency loss weight beta [default: 4]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Knowledge loss weight gamma, for search and retraining [default: 0.8]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Distillation temperature T [default: 1]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub kd_temp: Option<f64>,
    /// Gumbel temperature of the first search epoch [default: 5]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau_start: Option<f64>,
    /// Gumbel temperature of the last search epoch [default: 0.5]
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau_end: Option<f64>,
    /// Epochs of the command's stage [defaults: probe-train 20, search 80, train and enumerate 30]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Batch size of the command's stage [default: 32]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Largest number of stacked cells [default: 8]
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    /// Worker threads for enumerate [default: 1]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Child file; for eval, the model file written by train
    #[arg(long, global = true, value_name = "FILE")]
    pub child: Option<PathBuf>,
    /// Search checkpoint, resumed by search and read by derive
    #[arg(long, global = true, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a toy dataset
    GenData {
        /// keyword_sentiment, pair_overlap_equivalence or order_entailment [default: keyword_sentiment]
        #[arg(long)]
        kind: Option<String>,
        /// Number of examples [default: 1000]
        #[arg(long)]
        size: Option<usize>,
        /// Vocabulary size [default: 200]
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train the per-layer probes of a teacher
    ProbeTrain,
    /// Search a child architecture
    Search,
    /// Derive the argmax child from a search checkpoint
    Derive,
    /// Retrain a child from fresh weights
    Train,
    /// Evaluate a trained model on one split
    Eval {
        /// train or dev
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Parameter and FLOP counts of a child
    CostReport {
        /// Vocabulary size when no dataset is given
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Number of classes when no dataset is given [default: 2]
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Retrain and rank every child of a small search space
    Enumerate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADANAS_LOG", "info"))
        .format_timestamp(None)
        .init();
    match commands::run(&cli.command, &cli.flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {}", category.as_str(), e.to_string().replace('\n', " "));
            ExitCode::from(match category {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Training => 4,
                ErrorCategory::Internal => 1,
            })
        }
    }
}
