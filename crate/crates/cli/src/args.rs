//! Command-line grammar. Angles are given in degrees.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use xrayview::diffusion::{DEFAULT_GUIDANCE_SCALE, DEFAULT_SAMPLING_STEPS};
use xrayview::viewgeom::HEMISPHERE_RADIUS_M;

#[derive(Debug, Parser)]
#[command(name = "xrayview", version, about = "Single-view X-ray novel view synthesis", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded procedural chest phantom (HU volume).
    Phantom(PhantomArgs),
    /// Write a view manifest.
    #[command(subcommand)]
    Views(ViewsCommand),
    /// Render DRRs of a volume for every view of a manifest.
    Render(RenderArgs),
    /// Build a training dataset of rendered phantoms.
    Dataset(DatasetArgs),
    /// Run the training stage ladder.
    Train(TrainArgs),
    /// Synthesize target views from a PA source image.
    Sample(SampleArgs),
    /// Score predicted views against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `phantom.vol.json` and `phantom.raw`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ViewsCommand {
    /// Fibonacci hemisphere lattice; record 0 is the PA pole.
    Fibonacci(FibonacciArgs),
    /// The simple arc from -90 to +90 degrees through PA (PA excluded).
    Arc(ArcArgs),
}

#[derive(Debug, Args)]
pub struct FibonacciArgs {
    #[arg(long, default_value_t = 1500)]
    pub n: usize,
    #[arg(long, default_value_t = HEMISPHERE_RADIUS_M)]
    pub radius: f64,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ArcArgs {
    #[arg(long = "step-deg", default_value_t = 5.0)]
    pub step_deg: f64,
    #[arg(long, default_value_t = HEMISPHERE_RADIUS_M)]
    pub radius: f64,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Volume sidecar (`.vol.json`) or raw file.
    #[arg(long)]
    pub volume: PathBuf,
    /// View manifest.
    #[arg(long)]
    pub views: PathBuf,
    /// Comma-separated detector resolutions in pixels.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub resolutions: Vec<usize>,
    /// Output directory; images go to `<out>/<res>/<view name>.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Number of phantoms.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Views per phantom.
    #[arg(long, default_value_t = 64)]
    pub views: usize,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub resolutions: Vec<usize>,
    #[arg(long, default_value_t = HEMISPHERE_RADIUS_M)]
    pub radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Stage ladder TOML; the built-in 32 -> 64 px ladder when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory built by `dataset`.
    #[arg(long)]
    pub views: PathBuf,
    /// Run only this stage (1-based); all stages when omitted.
    #[arg(long)]
    pub stage: Option<usize>,
    /// Initial checkpoint for a single stage that starts from one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides the seed of every stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for `stage<k>.ckpt` and `stage<k>_loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PA source image (PNG).
    #[arg(long)]
    pub source: PathBuf,
    /// Target views as `azimuth,elevation` in degrees; separate several
    /// with `;` or repeat the flag.
    #[arg(long)]
    pub target: Vec<String>,
    /// View manifest whose records are added to the targets.
    #[arg(long)]
    pub views: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLING_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_GUIDANCE_SCALE)]
    pub cfg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth images.
    #[arg(long)]
    pub gt: PathBuf,
    /// View manifest selecting the views (and their set) to score.
    #[arg(long)]
    pub views: PathBuf,
    /// Report CSV to write.
    #[arg(long)]
    pub metrics: PathBuf,
}
