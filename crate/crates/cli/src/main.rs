//! `matting` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failed numeric
//! check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Attention-guided image matting: data generation, trimaps, training,
/// inference, evaluation and gradient checks.
#[derive(Debug, Parser)]
#[command(name = "matting", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Turn a binary mask into a 0/128/255 trimap.
    Trimap(TrimapArgs),
    /// Train on the train split of a dataset.
    Train(TrainArgs),
    /// Predict the alpha matte of one image.
    Infer(InferArgs),
    /// Score a checkpoint or a directory of predictions on a split.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients of every operator.
    Gradcheck(GradcheckArgs),
    /// Write the per-stage attention maps of one image as PNGs.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples (default 576).
    #[arg(long)]
    pub count: Option<usize>,
    /// Size of the test split (default count / 9).
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Side length of the square samples in pixels (default 96).
    #[arg(long)]
    pub size: Option<usize>,
    /// Master seed (default 2024).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trimap radius as a fraction of the mean bounding-box side.
    #[arg(long)]
    pub rate: Option<f64>,
    /// JSON file with defaults for the options above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrimapArgs {
    /// Binary mask image; pixels at or above half intensity are foreground.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Radius as a fraction of the mean bounding-box side (default 0.03).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Smallest radius in pixels (default 1).
    #[arg(long)]
    pub min_radius: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints, the loss log and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square training crop in pixels.
    #[arg(long, conflicts_with = "no_crop")]
    pub crop: Option<usize>,
    /// Train on whole samples without augmentation.
    #[arg(long)]
    pub no_crop: bool,
    /// Replace attention pooling with plain average pooling and nearest
    /// upsampling.
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub convs_per_stage: Option<usize>,
    /// Weight of the alpha loss against the compositional loss.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Keep attention group-norm scale and shift fixed.
    #[arg(long)]
    pub freeze_norm: bool,
}

/// Either a trimap or a mask to derive one from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TrimapSource {
    #[arg(long)]
    pub trimap: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// RGB image.
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub source: TrimapSource,
    /// Output matte (PNG or PGM).
    #[arg(long)]
    pub out: PathBuf,
    /// Longest network input edge (default 1500).
    #[arg(long)]
    pub max_edge: Option<usize>,
    /// Trimap rate when deriving the trimap from a mask.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate this checkpoint's predictions.
    #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate `<id>.png` mattes from this directory.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `train` or `test` (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// Method name in the CSV row.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub max_edge: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds per operator (default 10).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Finite-difference step (default 1e-3).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Optional CSV of per-operator results.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub source: TrimapSource,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_edge: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Trimap(a) => commands::trimap(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportAttention(a) => commands::export_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
