use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const DATA_DIR_ENV: &str = "DBDH_DATA_DIR";
pub const CACHE_DIR_ENV: &str = "DBDH_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "dbdh", version, about = "Localize invisible-watermark regions in photographs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a split manifest.
    Train(TrainArgs),
    /// Per-distortion IoU of a checkpoint.
    Eval(EvalArgs),
    /// Predict the four region vertices of one image.
    Localize(LocalizeArgs),
    /// Count multiply-adds of the inference graph.
    Profile(ProfileArgs),
    /// Resize host photographs and cut them into 900x900 tiles.
    PrepareHosts(PrepareHostsArgs),
    /// Embed a synthetic high-frequency watermark into hosts.
    EmbedSynthetic(EmbedArgs),
    /// Blend an embedded region back towards its host.
    PostprocessWmss(PostprocessArgs),
    /// Split a sample list into train/val/test.
    MakeManifest(ManifestArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base directory for relative data paths.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Base directory for run outputs.
    #[arg(long, env = CACHE_DIR_ENV)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct AugArgs {
    /// Augmentation family.
    #[arg(long, default_value = "ss")]
    pub aug: String,
    /// Augmentation parameters as JSON or TOML.
    #[arg(long)]
    pub aug_config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Model widths as JSON or TOML.
    #[arg(long, conflicts_with = "uniform_width")]
    pub model_config: Option<PathBuf>,
    /// Use the same channel width for every layer.
    #[arg(long)]
    pub uniform_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub aug: AugArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Split manifest (JSON lines).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "full")]
    pub ablation: String,
    /// Run directory; defaults to `<cache-dir>/runs/<ablation>-s<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    /// Defaults to 16 for ss and 32 for pimog.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub val_limit: Option<usize>,
    /// Train on stored images without warp or distortion.
    #[arg(long)]
    pub no_augment: bool,
    /// Skip the test-split report after training.
    #[arg(long)]
    pub no_final_eval: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub aug: AugArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Distortion column, or `all`.
    #[arg(long, default_value = "all")]
    pub distortion: String,
    /// Print a table instead of JSON.
    #[arg(long)]
    pub pretty: bool,
    /// Also write report.json and config.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, required_unless_present = "oracle_manifest")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// Write the rectified region here.
    #[arg(long)]
    pub rectify_out: Option<PathBuf>,
    /// Rectified size as HxW or a single side.
    #[arg(long, default_value = "400")]
    pub rectify_size: String,
    #[arg(long, hide = true, requires = "oracle_id")]
    pub oracle_manifest: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub oracle_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 900)]
    pub height: usize,
    #[arg(long, default_value_t = 900)]
    pub width: usize,
    /// Include per-layer counts.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
pub struct PrepareHostsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directories or image files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of host tiles; omit to generate synthetic hosts.
    #[arg(long)]
    pub hosts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub region_side: usize,
    #[arg(long, default_value_t = 40.0)]
    pub psnr: f64,
    /// Number of synthetic hosts when `--hosts` is absent.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Side of synthetic hosts.
    #[arg(long, default_value_t = 900)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub host: PathBuf,
    #[arg(long)]
    pub embedded: PathBuf,
    /// Region as x0,y0,x1,y1 (half-open); defaults to the centred 400 square.
    #[arg(long)]
    pub rect: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub strength: f64,
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sample list (JSON lines) from embed-synthetic.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub val: usize,
    #[arg(long, default_value_t = 350)]
    pub test: usize,
}
