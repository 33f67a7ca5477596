//! `ebnn`: train, screen, inspect and export memory-minimal BNNs.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 on a runtime error.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ebnn::screening::{Family, DEFAULT_BUDGET};

#[derive(Debug, Parser)]
#[command(name = "ebnn", version, about = "Memory-minimal binarized neural networks")]
pub struct Cli {
    /// Output style.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned tables for reading.
    Table,
    /// One `key=value` record per line.
    Records,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write the model file and its latent sidecar.
    Train(TrainArgs),
    /// Report the accuracy of a model on a dataset.
    Eval(EvalArgs),
    /// Rank architectures under a memory budget and train the best.
    Screen(ScreenArgs),
    /// Print the memory model of a network.
    Mem(MemArgs),
    /// Emit a standalone C header and source for a model.
    Codegen(CodegenArgs),
    /// Time inference on the host and report device cost estimates.
    Bench(BenchArgs),
}

/// Dataset selection shared by several commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// `mnist`, an MNIST directory, an IDX image file, `cifar:DIR` or
    /// `synth:DIM:CLASSES:N[:SEED]`.
    #[arg(long)]
    pub data: String,
    /// IDX label file for an IDX image file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Use at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Architecture selection.
#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Layer list such as `c4k3s1p2/2,c8k3s1p2/2,f64`: `cFkKsS[pP/Q]` is a
    /// convolution (with optional pooling), `fN` a hidden FC layer. The
    /// classifier is appended.
    #[arg(long, conflicts_with = "family")]
    pub arch: Option<String>,
    /// Use the largest network of this family that fits `--budget`.
    #[arg(long)]
    pub family: Option<Family>,
    /// Memory budget `M` in bytes.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Fraction of the training data held out for per-epoch evaluation.
    #[arg(long, default_value_t = 0.0)]
    pub eval_split: f64,
    /// Continue from this model and its sidecar instead of a fresh start.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Model file to write; the sidecar gets a `.latent` suffix.
    #[arg(long, default_value = "model.ebnn")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long, default_value = "mlp-1")]
    pub family: Family,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Number of top-ranked candidates to train; 0 ranks by memory only.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Concurrent training jobs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Host timing passes per trained candidate (adds wall-clock fields).
    #[arg(long, default_value_t = 0)]
    pub measure_runs: usize,
    /// Where to write the most accurate model.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MemArgs {
    /// Model file; otherwise the architecture flags are used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Input shape `CxHxW` for architecture flags.
    #[arg(long, default_value = "1x28x28")]
    pub input: String,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
}

#[derive(Debug, Args)]
pub struct CodegenArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Symbol and file name prefix.
    #[arg(long, default_value = "ebnn_model")]
    pub prefix: String,
    /// Keep raw batch-norm parameters instead of folded thresholds.
    #[arg(long)]
    pub raw_bn: bool,
    /// Take working storage from the caller instead of static buffers.
    #[arg(long)]
    pub caller_arena: bool,
    /// Dataset providing test vectors.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of test vectors to embed.
    #[arg(long, default_value_t = 10)]
    pub test_vectors: usize,
    /// Compile and run the self-test with `$EBNN_CC` (default `cc`).
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Passes over the samples.
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
