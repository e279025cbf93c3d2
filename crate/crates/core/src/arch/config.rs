use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{join_list, parse_list, KvMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Residual18,
    MobileLite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Conv3x3,
    Fse,
    SePlusConv,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Residual18 => "residual18",
            EncoderKind::MobileLite => "mobile_lite",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual18" => Ok(EncoderKind::Residual18),
            "mobile_lite" => Ok(EncoderKind::MobileLite),
            _ => Err(Error::Parse(format!("unknown encoder kind {s:?}"))),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Conv3x3 => "conv3x3",
            FusionKind::Fse => "fse",
            FusionKind::SePlusConv => "se",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv3x3" => Ok(FusionKind::Conv3x3),
            "fse" => Ok(FusionKind::Fse),
            "se" | "se_plus_conv" => Ok(FusionKind::SePlusConv),
            _ => Err(Error::Parse(format!("unknown fusion kind {s:?} (conv3x3, fse, se)"))),
        }
    }
}

/// Channel plan of the inverted-residual encoder: (in, kernel, expansion, out, squeeze-excite, stride).
pub const MOBILE_BLOCKS: [(usize, usize, usize, usize, bool, usize); 15] = [
    (16, 3, 16, 16, false, 1),
    (16, 3, 64, 24, false, 2),
    (24, 3, 72, 24, false, 1),
    (24, 5, 72, 40, true, 2),
    (40, 5, 120, 40, true, 1),
    (40, 5, 120, 40, true, 1),
    (40, 3, 240, 80, false, 2),
    (80, 3, 200, 80, false, 1),
    (80, 3, 184, 80, false, 1),
    (80, 3, 184, 80, false, 1),
    (80, 3, 480, 112, true, 1),
    (112, 3, 672, 112, true, 1),
    (112, 5, 672, 160, true, 2),
    (160, 5, 960, 160, true, 1),
    (160, 5, 960, 160, true, 1),
];

/// Index of the last block feeding each encoder level 1..=5.
pub const MOBILE_LEVEL_ENDS: [usize; 5] = [0, 2, 5, 11, 14];

pub const MOBILE_CHANNELS: [usize; 5] = [16, 24, 40, 112, 160];

/// Complete description of a depth network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub encoder_kind: EncoderKind,
    /// Output channels of encoder levels 1..=L.
    pub encoder_channels: Vec<usize>,
    /// Output channels of decoder nodes 0..L-1.
    pub decoder_channels: Vec<usize>,
    /// Width of the aggregation nodes in rows 1..=L-2.
    pub aggregation_channels: Vec<usize>,
    pub num_levels: usize,
    pub reduction_ratio: usize,
    pub fusion_kind: FusionKind,
    pub num_output_scales: usize,
    /// Dense skip connections; when false the decoder is a plain U-Net.
    pub dense_skip: bool,
    pub input_channels: usize,
}

impl ArchConfig {
    pub fn hr_depth_res18(fusion_kind: FusionKind) -> Self {
        ArchConfig {
            encoder_kind: EncoderKind::Residual18,
            encoder_channels: vec![64, 64, 128, 256, 512],
            decoder_channels: vec![16, 32, 64, 128, 256],
            aggregation_channels: vec![32, 64, 128],
            num_levels: 5,
            reduction_ratio: 4,
            fusion_kind,
            num_output_scales: 4,
            dense_skip: true,
            input_channels: 3,
        }
    }

    pub fn baseline_unet() -> Self {
        ArchConfig {
            dense_skip: false,
            aggregation_channels: Vec::new(),
            ..Self::hr_depth_res18(FusionKind::Conv3x3)
        }
    }

    pub fn hr_depth_lite() -> Self {
        ArchConfig {
            encoder_kind: EncoderKind::MobileLite,
            encoder_channels: MOBILE_CHANNELS.to_vec(),
            decoder_channels: vec![8, 16, 24, 40, 80],
            aggregation_channels: vec![16, 24, 40],
            ..Self::hr_depth_res18(FusionKind::Fse)
        }
    }

    /// A narrow residual network for desk-scale training runs.
    pub fn tiny_res18(fusion_kind: FusionKind) -> Self {
        ArchConfig {
            encoder_channels: vec![8, 8, 16, 32, 64],
            decoder_channels: vec![8, 8, 16, 16, 32],
            aggregation_channels: vec![4, 8, 16],
            ..Self::hr_depth_res18(fusion_kind)
        }
    }

    /// Preset selected by a command-line architecture name.
    pub fn named(name: &str, fusion: Option<FusionKind>) -> Result<Self> {
        match name {
            "hr-depth-res18" => Ok(Self::hr_depth_res18(fusion.unwrap_or(FusionKind::Fse))),
            "hr-depth-lite" => Ok(ArchConfig {
                fusion_kind: fusion.unwrap_or(FusionKind::Fse),
                ..Self::hr_depth_lite()
            }),
            "baseline-unet" => Ok(ArchConfig {
                fusion_kind: fusion.unwrap_or(FusionKind::Conv3x3),
                ..Self::baseline_unet()
            }),
            "tiny-res18" => Ok(Self::tiny_res18(fusion.unwrap_or(FusionKind::Fse))),
            _ => Err(Error::Parse(format!(
                "unknown architecture {name:?} (hr-depth-res18, hr-depth-lite, baseline-unet, tiny-res18)"
            ))),
        }
    }

    pub fn with_scales(mut self, scales: usize) -> Self {
        self.num_output_scales = scales;
        self
    }

    /// Number of aggregation nodes in `row` (1-based).
    pub fn row_len(&self, row: usize) -> usize {
        if !self.dense_skip || row == 0 || row + 1 >= self.num_levels {
            0
        } else {
            self.num_levels - 1 - row
        }
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_levels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Build { node: "config".into(), detail });
        let l = self.num_levels;
        if l < 2 {
            return bad(format!("num_levels {l} < 2"));
        }
        if self.encoder_channels.len() != l || self.decoder_channels.len() != l {
            return bad(format!(
                "{l} levels need {l} encoder and decoder widths, got {} and {}",
                self.encoder_channels.len(),
                self.decoder_channels.len()
            ));
        }
        let agg_rows = if self.dense_skip { l - 2 } else { 0 };
        if self.aggregation_channels.len() != agg_rows {
            return bad(format!(
                "{agg_rows} aggregation rows, got {} widths",
                self.aggregation_channels.len()
            ));
        }
        let all = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(&self.aggregation_channels);
        if all.clone().any(|&c| c == 0) || self.input_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.reduction_ratio == 0 {
            return bad("reduction ratio must be positive".into());
        }
        if self.num_output_scales == 0 || self.num_output_scales > l - 1 {
            return bad(format!("num_output_scales {} outside 1..={}", self.num_output_scales, l - 1));
        }
        if self.encoder_kind == EncoderKind::MobileLite
            && (l != 5 || self.encoder_channels != MOBILE_CHANNELS)
        {
            return bad(format!("mobile_lite encoder has fixed widths {MOBILE_CHANNELS:?}"));
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert(format!("{prefix}encoder_kind"), self.encoder_kind);
        kv.insert(format!("{prefix}encoder_channels"), join_list(&self.encoder_channels));
        kv.insert(format!("{prefix}decoder_channels"), join_list(&self.decoder_channels));
        kv.insert(format!("{prefix}aggregation_channels"), join_list(&self.aggregation_channels));
        kv.insert(format!("{prefix}num_levels"), self.num_levels);
        kv.insert(format!("{prefix}reduction_ratio"), self.reduction_ratio);
        kv.insert(format!("{prefix}fusion_kind"), self.fusion_kind);
        kv.insert(format!("{prefix}num_output_scales"), self.num_output_scales);
        kv.insert(format!("{prefix}dense_skip"), self.dense_skip);
        kv.insert(format!("{prefix}input_channels"), self.input_channels);
        kv
    }

    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = kv.get(&key(k)).unwrap_or("");
            if v.is_empty() {
                Ok(Vec::new())
            } else {
                parse_list(v)
            }
        };
        let cfg = ArchConfig {
            encoder_kind: kv.require(&key("encoder_kind"))?,
            encoder_channels: list("encoder_channels")?,
            decoder_channels: list("decoder_channels")?,
            aggregation_channels: list("aggregation_channels")?,
            num_levels: kv.require(&key("num_levels"))?,
            reduction_ratio: kv.require(&key("reduction_ratio"))?,
            fusion_kind: kv.require(&key("fusion_kind"))?,
            num_output_scales: kv.require(&key("num_output_scales"))?,
            dense_skip: kv.require(&key("dense_skip"))?,
            input_channels: kv.require(&key("input_channels"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [
            ArchConfig::hr_depth_res18(FusionKind::Fse),
            ArchConfig::baseline_unet(),
            ArchConfig::hr_depth_lite(),
            ArchConfig::tiny_res18(FusionKind::Conv3x3),
        ] {
            cfg.validate().unwrap();
            assert_eq!(ArchConfig::from_kv(&cfg.to_kv("arch."), "arch.").unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_too_many_scales() {
        let cfg = ArchConfig::hr_depth_res18(FusionKind::Fse).with_scales(5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn named_presets() {
        assert!(!ArchConfig::named("baseline-unet", None).unwrap().dense_skip);
        assert_eq!(
            ArchConfig::named("hr-depth-res18", Some(FusionKind::Conv3x3)).unwrap().fusion_kind,
            FusionKind::Conv3x3
        );
        assert!(ArchConfig::named("resnet50", None).is_err());
    }
}
