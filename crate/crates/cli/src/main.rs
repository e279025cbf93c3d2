mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::Failure;

#[derive(Parser, Debug)]
#[command(name = "hrdepth", version, about = "Self-supervised monocular depth: training, distillation, inference and analysis")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

/// Flags shared by every verb.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value configuration file; a run manifest works too
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist yet
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input resolution as WxH
    #[arg(long, value_name = "WxH")]
    pub resolution: Option<String>,
    /// hr-depth-res18, hr-depth-lite, baseline-unet or tiny-res18
    #[arg(long)]
    pub arch: Option<String>,
    /// conv3x3, fse or se
    #[arg(long)]
    pub fusion: Option<String>,
    /// Mask pixels where an unwarped source already matches better
    #[arg(long)]
    pub automask: bool,
    /// Number of output scales
    #[arg(long)]
    pub scales: Option<usize>,
}

/// Where training images come from.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Use the small-network desk-scale preset (320x96 unless overridden)
    #[arg(long)]
    pub toy: bool,
    /// Frames in the synthetic sequence
    #[arg(long)]
    pub frames: Option<usize>,
    /// Synthetic scene description (key=value)
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// KITTI raw root; switches from synthetic to KITTI data
    #[arg(long)]
    pub kitti_root: Option<PathBuf>,
    /// Split file of `<drive> <frame> [l|r]` lines
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Add the opposite stereo camera as a source
    #[arg(long)]
    pub stereo: bool,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Train depth and pose networks self-supervised
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a student against a frozen teacher checkpoint
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Teacher checkpoint
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Predict depth for one image
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// 16-bit PNG value per metre
        #[arg(long, default_value_t = 256.0)]
        depth_scale: f64,
    },
    /// Count parameters per node and check fusion-block closed forms
    AuditParams {
        #[command(flatten)]
        common: Common,
    },
    /// Error of low-resolution prediction by depth-gradient band
    AnalyzeInterp {
        #[command(flatten)]
        common: Common,
        /// Down/up-sampling factor: 2, 4 or 8
        #[arg(long, default_value_t = 4)]
        downscale: usize,
        /// Use this network's prediction instead of the exact depth
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Depth metrics of a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image to evaluate (repeatable, paired with --gt)
        #[arg(long)]
        image: Vec<PathBuf>,
        /// 16-bit ground-truth depth PNG (repeatable)
        #[arg(long)]
        gt: Vec<PathBuf>,
        /// 16-bit ground-truth value per metre
        #[arg(long, default_value_t = 256.0)]
        gt_scale: f64,
        /// Frames of the synthetic scene used when no images are given
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long)]
        no_median_scale: bool,
        #[arg(long)]
        eigen_crop: bool,
        /// Depth cap in metres
        #[arg(long, default_value_t = 80.0)]
        cap: f64,
    },
    /// Finite-difference gradient checks
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Run every case
        #[arg(long)]
        all: bool,
        /// Run cases whose name contains this
        #[arg(long)]
        case: Option<String>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn dispatch(verb: Verb) -> Result<(), Failure> {
    match verb {
        Verb::Train { common, data } => commands::train(&common, &data),
        Verb::Distill { common, data, teacher } => commands::distill(&common, &data, teacher),
        Verb::Infer { common, checkpoint, image, depth_scale } => commands::infer(&common, &checkpoint, &image, depth_scale),
        Verb::AuditParams { common } => commands::audit(&common),
        Verb::AnalyzeInterp { common, downscale, checkpoint } => commands::analyze_interp(&common, downscale, checkpoint),
        Verb::Eval { common, checkpoint, image, gt, gt_scale, frames, no_median_scale, eigen_crop, cap } => {
            let opts = hrdepth::eval::MetricOptions { median_scale: !no_median_scale, cap, eigen_crop };
            commands::eval(&common, &checkpoint, &image, &gt, gt_scale, frames, opts)
        }
        Verb::Gradcheck { common, all, case, seeds } => commands::gradcheck(&common, all, case, seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
