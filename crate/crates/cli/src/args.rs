use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use pnet::arch::{DownsampleVariant, ModelConfig, SkipTap};
use pnet::data::AugmentPolicy;
use pnet::metrics::Averaging;

#[derive(Debug, Parser)]
#[command(name = "pnet", version, about = "Train, evaluate and analyze PNet segmentation models")]
#[command(after_help = "Every flag except --config can also be set as `key = value` in the --config file \
(key = flag name without dashes). Precedence: flags > config file > --preset > built-in defaults.\n\
The PNET_THREADS environment variable caps worker threads.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan and split a dataset, train, and write checkpoints and logs
    Train(TrainCmd),
    /// Evaluate a checkpoint on a dataset split and emit a metrics CSV
    Eval(EvalCmd),
    /// Print per-layer shapes, parameters, FLOPs and dilation geometry
    Analyze(AnalyzeCmd),
    /// Train every configuration of a grid with a shared seed and split
    Ablate(AblateCmd),
    /// Segment a single image with a checkpoint
    Predict(PredictCmd),
    /// Write the synthetic disks dataset as PNG files
    Synth(SynthCmd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 384x288, batch size 2
    Cvc,
    /// 512x384, batch size 2
    Etis,
    /// 224x224, batch size 4
    Skin,
}

impl Preset {
    /// Flags a preset expands to.
    pub fn flags(self) -> Vec<String> {
        let (size, batch, name) = match self {
            Preset::Cvc => ("384x288", "2", "cvc"),
            Preset::Etis => ("512x384", "2", "etis"),
            Preset::Skin => ("224x224", "4", "skin"),
        };
        ["--size", size, "--batch-size", batch, "--dataset-name", name]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// `WxH` image size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

pub fn parse_size(s: &str) -> Result<Size, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let width: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    let height: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    ModelConfig::check_resolution(height, width).map_err(|e| e.to_string())?;
    Ok(Size { width, height })
}

fn parse_list<const N: usize, T: std::str::FromStr>(s: &str) -> Result<[T; N], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad value '{p}' in '{s}'")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated values, got '{s}'"))
}

pub fn parse_widths(s: &str) -> Result<[usize; 4], String> {
    parse_list::<4, usize>(s)
}

pub fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    parse_list::<2, usize>(s).map(|[a, b]| (a, b))
}

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    parse_list::<2, f64>(s).map(|[a, b]| (a, b))
}

fn parse_downsample(s: &str) -> Result<DownsampleVariant, String> {
    s.parse().map_err(|e: pnet::Error| e.to_string())
}

fn parse_skip(s: &str) -> Result<SkipTap, String> {
    s.parse().map_err(|e: pnet::Error| e.to_string())
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Output channels of the four encoder stages
    #[arg(long, value_name = "C1,C2,C3,C4", default_value = "32,64,128,256", value_parser = parse_widths)]
    pub stage_widths: [usize; 4],
    /// Channels of the decoder fuse and mix convolutions
    #[arg(long, default_value_t = 64)]
    pub decoder_width: usize,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    /// Dilation rates of the two Patch-block convolutions
    #[arg(long, value_name = "R1,R2", default_value = "2,6", value_parser = parse_pair)]
    pub dilation: (usize, usize),
    /// conv5x5, conv3x3 or conv3x3_maxpool
    #[arg(long, default_value = "conv5x5", value_parser = parse_downsample)]
    pub downsample: DownsampleVariant,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Decoder skip source: after_patch or before_patch
    #[arg(long, default_value = "after_patch", value_parser = parse_skip)]
    pub skip_tap: SkipTap,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            stage_widths: self.stage_widths,
            decoder_width: self.decoder_width,
            num_classes: self.num_classes,
            dilation_pair: self.dilation,
            downsample: self.downsample,
            dropout_rate: self.dropout,
            skip_tap: self.skip_tap,
            ..ModelConfig::default()
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Dataset root containing the image and mask directories
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "images")]
    pub images_subdir: String,
    #[arg(long, default_value = "masks")]
    pub masks_subdir: String,
    /// Name used in reports [default: data directory name]
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Fraction of the pairs assigned to the train split
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
}

impl DataArgs {
    pub fn name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.data_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Bundled size and batch settings: cvc, etis or skin
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Training resolution WxH; both sides divisible by 16
    #[arg(long, default_value = "384x288", value_parser = parse_size)]
    pub size: Size,
    #[arg(long, default_value_t = 200)]
    pub epochs: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    /// Seed for the split, initialization, shuffling, augmentation and dropout
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test evaluation period in epochs; the last epoch is always evaluated, 0 disables evaluation
    #[arg(long, default_value_t = 1)]
    pub eval_every: u64,
    /// Enable online augmentation
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub augment: bool,
    /// Allow 90-degree rotations during augmentation
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub rotate90: bool,
    #[arg(long, default_value_t = 0.5)]
    pub mirror_prob: f64,
    /// Brightness factor range
    #[arg(long, value_name = "LO,HI", default_value = "0.8,1.2", value_parser = parse_range)]
    pub brightness: (f64, f64),
    /// Contrast factor range
    #[arg(long, value_name = "LO,HI", default_value = "0.8,1.2", value_parser = parse_range)]
    pub contrast: (f64, f64),
}

impl TrainArgs {
    pub fn augment_policy(&self) -> Option<AugmentPolicy> {
        self.augment.then_some(AugmentPolicy {
            rotate90: self.rotate90,
            mirror_prob: self.mirror_prob,
            brightness: self.brightness,
            contrast: self.contrast,
        })
    }
}

#[derive(Clone, Debug, Args)]
pub struct ConfigArg {
    /// INI file of `key = value` settings; keys are flag names without the leading dashes
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Resume from a checkpoint that carries optimizer state
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Run directory for checkpoints, logs and the manifest
    #[arg(long, default_value = "runs/pnet")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    /// Counts summed over the split
    Micro,
    /// Mean of per-image scores
    PerImage,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::PerImage => Averaging::PerImage,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split manifest written by `train`; rebuilt from the checkpoint seed when absent
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    pub averaging: AveragingArg,
    #[arg(long, default_value_t = 10)]
    pub fps_warmup: usize,
    /// Timed forward passes; 0 skips the throughput measurement
    #[arg(long, default_value_t = 100)]
    pub fps_iters: usize,
    /// Method column of the report
    #[arg(long, default_value = "PNet")]
    pub method: String,
    /// Metrics CSV destination (also printed)
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Directory for predicted 0/255 masks, one PNG per image
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeCmd {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value = "384x288", value_parser = parse_size)]
    pub size: Size,
    /// Resolution the FLOP ratio is reported against
    #[arg(long, default_value = "384x288", value_parser = parse_size)]
    pub reference_size: Size,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// conv3x3, conv3x3_maxpool, conv5x5
    Downsample,
    /// (2,5), (2,6), (2,7), (3,8)
    Dilation,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub grid: Grid,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory for per-configuration runs and the combined `ablation.csv`
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output mask PNG at the checkpoint's training size
    #[arg(long, default_value = "mask.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value = "96x96", value_parser = parse_size)]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset root; `images/` and `masks/` are created inside
    #[arg(long)]
    pub out: PathBuf,
}
