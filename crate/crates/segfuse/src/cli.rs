use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::commands;

#[derive(Parser, Debug)]
#[command(name = "segfuse", version, about = "Segmentation evaluation, losses, augmentation and ensembling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-class IoU and mIoU of predictions against ground truth
    Eval(EvalArgs),
    /// Square-root inverse-frequency class weights from label maps
    ClassWeights(ClassWeightsArgs),
    /// Evaluate a loss and compare its gradient against finite differences
    LossCheck(LossCheckArgs),
    /// Run the seeded training augmentation over a manifest
    Augment(AugmentArgs),
    /// Fuse multi-scale and flipped soft predictions
    FuseTta(FuseTtaArgs),
    /// Mix two soft predictions: gamma * A + (1 - gamma) * B
    Aggregate(AggregateArgs),
    /// Grid-search the mixing weight that maximizes mIoU
    GammaSearch(GammaSearchArgs),
    /// Elementwise mean of parameter-set checkpoints
    AvgWeights(AvgWeightsArgs),
    /// Rewrite label maps through a class remap table
    Remap(RemapArgs),
    /// Split a manifest by annotated-pixel coverage after remapping
    Filter(FilterArgs),
}

#[derive(Args, Debug, Clone, Copy)]
pub struct ThreadArgs {
    /// Worker threads [default: available cores]
    #[arg(long, env = "SEGFUSE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth label maps (.segt or 8-bit PNG)
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions: label maps, or soft predictions reduced by argmax
    #[arg(long)]
    pub pred: PathBuf,
    /// Class count [default: largest id seen + 1]
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Write `class_id,iou` rows and a final `miou` row
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also report mIoU per top-level subdirectory
    #[arg(long)]
    pub per_video: bool,
    /// Write the summed confusion matrix as an f32 [K, K] tensor
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct ClassWeightsArgs {
    /// Label paths, one per line, or a tab-separated dataset manifest
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub num_classes: usize,
    /// Write `class_id,count,weight` rows
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the weights as a 1-D f32 tensor
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LossCheckArgs {
    /// Logits tensor, f32 [K, H, W]
    #[arg(long)]
    pub logits: PathBuf,
    /// Ground-truth label map
    #[arg(long)]
    pub gt: PathBuf,
    /// Class weights tensor, f32 [K]
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Confusion matrix tensor, f32 [K, K]
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// weighted-ce, pixel-distribution, confusion-focal, or all
    #[arg(long, default_value = "all")]
    pub loss: String,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Dataset manifest (image, label, tag per line)
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Print the random draws and sampled parameters for each image
    #[arg(long)]
    pub dump_draws: bool,
    #[arg(long, default_value_t = 480)]
    pub crop_h: usize,
    #[arg(long, default_value_t = 853)]
    pub crop_w: usize,
    /// Skip brightness, contrast, saturation and hue changes
    #[arg(long)]
    pub no_distortion: bool,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct FuseTtaArgs {
    /// Inputs as PATH@SCALE or PATH@SCALE:flip
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Output height [default: height of the unflipped scale-1 input]
    #[arg(long)]
    pub base_h: Option<usize>,
    /// Output width [default: width of the unflipped scale-1 input]
    #[arg(long)]
    pub base_w: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Weight of the first prediction, in [0, 1]
    #[arg(long)]
    pub gamma: f64,
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Write the per-pixel maximum probability as an f32 [H, W] tensor
    #[arg(long)]
    pub confidence_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GammaSearchArgs {
    /// Soft predictions of the model weighted by gamma
    #[arg(long)]
    pub ps: PathBuf,
    /// Soft predictions of the model weighted by 1 - gamma
    #[arg(long)]
    pub pv: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Write `gamma,miou` for every grid point
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct AvgWeightsArgs {
    /// Parameter-set files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct RemapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV of `source_id,target_id` rows
    #[arg(long)]
    pub map: PathBuf,
    /// Directory for remapped label tensors
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Manifest pointing at the remapped labels [default: OUT_DIR/manifest.tsv]
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    /// Coverage report [default: OUT_DIR/coverage.csv]
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Remap applied before measuring coverage [default: keep ids 0..=254]
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Minimum annotated fraction to keep a record
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long)]
    pub kept: PathBuf,
    #[arg(long)]
    pub dropped: PathBuf,
    /// Write `index,image,label,status,coverage,message` rows
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

/// Parses `argv` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
