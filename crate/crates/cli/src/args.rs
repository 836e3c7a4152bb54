use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pose3d::datapipe::dataset::Split;
use pose3d::inference::ReportFormat;
use pose3d::Dtype;

/// Spatiotemporal 3D CNN pose estimation: synthetic data, training,
/// evaluation and prediction.
#[derive(Debug, Parser)]
#[command(name = "pose3d", version)]
pub struct Cli {
    /// Base URL of a running `pose3d serve`. Without it an in-process
    /// server on an ephemeral port handles the request.
    #[arg(long, global = true, env = "POSE3D_SERVER")]
    pub server: Option<String>,

    /// Log filter, e.g. `info` or `pose3d=debug`.
    #[arg(long, global = true, default_value = "warn", env = "POSE3D_LOG")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of stick figures with known joints.
    Synth(SynthArgs),
    /// Train a network; writes the best weights and a per-epoch CSV log.
    Train(TrainArgs),
    /// Score weights on a dataset split and export a per-action report.
    Eval(EvalArgs),
    /// Predict every decimated frame of one clip and write poses.csv.
    Predict(PredictArgs),
    /// Run the HTTP service in the foreground.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    /// Source frames per clip.
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clips tagged for the validation split (taken from the end).
    #[arg(long, default_value_t = 0)]
    pub val_clips: usize,
    /// Clips tagged for the test split (taken from the end).
    #[arg(long, default_value_t = 0)]
    pub test_clips: usize,
    /// JSON scene description overriding the default camera and body.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

/// Overrides shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON). Flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root (directory with manifest.json).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Decimation target frame rate.
    #[arg(long)]
    pub target_hz: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Random windows per training clip instead of every start.
    #[arg(long)]
    pub windows_per_clip: Option<usize>,
    /// Where to write the best weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Where to write the per-epoch CSV log.
    #[arg(long)]
    pub epoch_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Weights file to score. Without --config its own architecture is used.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Report path (defaults to the config's inference.report).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Per-action baseline report CSV; adds the improvement column.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Clip directory (frames/, joints.csv, boxes.csv, meta.json).
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long, default_value = "poses.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 13.0)]
    pub target_hz: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl From<Precision> for Dtype {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => Dtype::F32,
            Precision::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    PrettyTable,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::PrettyTable => ReportFormat::PrettyTable,
        }
    }
}
