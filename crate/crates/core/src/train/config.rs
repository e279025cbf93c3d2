use std::fmt;
use std::str::FromStr;

use crate::arch::{ArchConfig, FusionKind, PoseConfig};
use crate::error::{contract_err, Error, Result};
use crate::geometry::DepthRange;
use crate::kv::KvMap;
use crate::losses::{DistillConfig, LossConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    #[default]
    SelfSup,
    Distill,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::SelfSup => "selfsup",
            TrainMode::Distill => "distill",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selfsup" => Ok(TrainMode::SelfSup),
            "distill" => Ok(TrainMode::Distill),
            _ => Err(Error::Parse(format!("unknown training mode {s:?} (selfsup, distill)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// First epoch trained at the decayed rate.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub width: usize,
    pub height: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub loss: LossConfig,
    pub distill: DistillConfig,
    pub arch: ArchConfig,
    pub pose: PoseConfig,
    pub range: DepthRange,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            decay_epoch: 15,
            decay_factor: 10.0,
            batch_size: 12,
            width: 640,
            height: 192,
            max_steps: 0,
            mode: TrainMode::SelfSup,
            seed: 0,
            loss: LossConfig::default(),
            distill: DistillConfig::default(),
            arch: ArchConfig::hr_depth_res18(FusionKind::Fse),
            pose: PoseConfig::resnet18(),
            range: DepthRange::default(),
        }
    }
}

impl TrainConfig {
    /// Small networks for desk-scale runs.
    pub fn toy(width: usize, height: usize) -> Self {
        TrainConfig {
            batch_size: 1,
            width,
            height,
            arch: ArchConfig::tiny_res18(FusionKind::Fse),
            pose: PoseConfig::tiny(),
            ..TrainConfig::default()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.lr
        } else {
            self.lr / self.decay_factor
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay_epoch >= self.epochs {
            return contract_err("train_config", format!("decay epoch {} not below {} epochs", self.decay_epoch, self.epochs));
        }
        if self.batch_size == 0 || !(self.lr >= 0.0) || !(self.decay_factor > 0.0) {
            return contract_err("train_config", "batch size, lr and decay factor must be positive");
        }
        if self.arch.num_output_scales != self.loss.num_scales {
            return contract_err(
                "train_config",
                format!("network emits {} scales, loss expects {}", self.arch.num_output_scales, self.loss.num_scales),
            );
        }
        let m = self.arch.size_multiple();
        if self.width % m != 0 || self.height % m != 0 {
            return contract_err("train_config", format!("resolution {}x{} not divisible by {m}", self.width, self.height));
        }
        self.arch.validate()?;
        self.loss.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("epochs", self.epochs);
        kv.insert("lr", self.lr);
        kv.insert("decay_epoch", self.decay_epoch);
        kv.insert("decay_factor", self.decay_factor);
        kv.insert("batch_size", self.batch_size);
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("max_steps", self.max_steps);
        kv.insert("mode", self.mode);
        kv.insert("seed", self.seed);
        kv.insert("min_depth", self.range.min_depth);
        kv.insert("max_depth", self.range.max_depth);
        kv.merge(&self.loss.to_kv("loss."));
        kv.merge(&self.distill.to_kv("distill."));
        kv.merge(&self.arch.to_kv("arch."));
        kv.merge(&self.pose.to_kv("pose."));
        kv
    }

    /// Keys absent from `kv` keep the values of `base`.
    pub fn from_kv_over(kv: &KvMap, base: &TrainConfig) -> Result<Self> {
        let has = |p: &str| kv.keys().any(|k| k.starts_with(p));
        let cfg = TrainConfig {
            epochs: kv.parsed("epochs")?.unwrap_or(base.epochs),
            lr: kv.parsed("lr")?.unwrap_or(base.lr),
            decay_epoch: kv.parsed("decay_epoch")?.unwrap_or(base.decay_epoch),
            decay_factor: kv.parsed("decay_factor")?.unwrap_or(base.decay_factor),
            batch_size: kv.parsed("batch_size")?.unwrap_or(base.batch_size),
            width: kv.parsed("width")?.unwrap_or(base.width),
            height: kv.parsed("height")?.unwrap_or(base.height),
            max_steps: kv.parsed("max_steps")?.unwrap_or(base.max_steps),
            mode: kv.parsed("mode")?.unwrap_or(base.mode),
            seed: kv.parsed("seed")?.unwrap_or(base.seed),
            range: DepthRange::new(
                kv.parsed("min_depth")?.unwrap_or(base.range.min_depth),
                kv.parsed("max_depth")?.unwrap_or(base.range.max_depth),
            )?,
            loss: if has("loss.") { LossConfig::from_kv(kv, "loss.")? } else { base.loss.clone() },
            distill: if has("distill.") { DistillConfig::from_kv(kv, "distill.")? } else { base.distill.clone() },
            arch: if has("arch.") { ArchConfig::from_kv(kv, "arch.")? } else { base.arch.clone() },
            pose: if has("pose.") { PoseConfig::from_kv(kv, "pose.")? } else { base.pose.clone() },
        };
        Ok(cfg)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        Self::from_kv_over(kv, &TrainConfig::default())
    }
}
