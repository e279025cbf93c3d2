//! KITTI raw layout: `<root>/<drive>/image_02/data/<frame:010>.png` for the
//! left camera and `image_03` for the right.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{stereo_transform, CameraIntrinsics, KITTI_FX_RATIO, KITTI_FY_RATIO};
use crate::ops::resize_tensor;

use super::image_io::read_rgb;
use super::{Sample, SourceFrame, SourceKind};

#[derive(Clone, Debug, PartialEq)]
pub struct KittiConfig {
    pub root: PathBuf,
    pub width: usize,
    pub height: usize,
    /// Dataset-average focal lengths as fractions of width and height.
    pub fx_ratio: f64,
    pub fy_ratio: f64,
    pub stereo: bool,
    pub baseline: f64,
    pub image_ext: String,
}

impl KittiConfig {
    pub fn new(root: impl Into<PathBuf>, width: usize, height: usize) -> Self {
        KittiConfig {
            root: root.into(),
            width,
            height,
            fx_ratio: KITTI_FX_RATIO,
            fy_ratio: KITTI_FY_RATIO,
            stereo: false,
            baseline: 0.54,
            image_ext: "png".into(),
        }
    }

    fn frame_path(&self, drive: &str, right: bool, frame: i64) -> PathBuf {
        let cam = if right { "image_03" } else { "image_02" };
        self.root
            .join(drive)
            .join(cam)
            .join("data")
            .join(format!("{frame:010}.{}", self.image_ext))
    }
}

/// One split line: `<drive path> <frame index> [l|r]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEntry {
    pub drive: String,
    pub frame: i64,
    pub right: bool,
}

pub fn load_split(path: &Path) -> Result<Vec<SplitEntry>> {
    parse_split(&std::fs::read_to_string(path)?)
}

pub(crate) fn parse_split(text: &str) -> Result<Vec<SplitEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            let bad = || Error::Parse(format!("split line {}: {l:?}", no + 1));
            let (drive, frame) = match parts[..] {
                [d, f] | [d, f, _] => (d, f.parse::<i64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            };
            let right = match parts.get(2) {
                None | Some(&"l") => false,
                Some(&"r") => true,
                Some(_) => return Err(bad()),
            };
            Ok(SplitEntry { drive: drive.to_string(), frame, right })
        })
        .collect()
}

/// Target with its t−1 and t+1 neighbours (and the stereo partner when
/// enabled), resized to the configured resolution. `Ok(None)` when a
/// neighbour is missing.
pub fn load_kitti_sample(cfg: &KittiConfig, entry: &SplitEntry) -> Result<Option<Sample>> {
    let load = |right: bool, frame: i64| -> Result<Option<crate::tensor::Tensor>> {
        if frame < 0 {
            return Ok(None);
        }
        let p = cfg.frame_path(&entry.drive, right, frame);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(resize_tensor(&read_rgb(&p)?, cfg.height, cfg.width)?))
    };
    let Some(target) = load(entry.right, entry.frame)? else {
        return Err(Error::Data(format!("missing target frame {:?}", cfg.frame_path(&entry.drive, entry.right, entry.frame))));
    };
    let mut sources = Vec::new();
    for off in [-1i64, 1] {
        match load(entry.right, entry.frame + off)? {
            Some(image) => sources.push(SourceFrame { image, kind: SourceKind::Temporal(off as i32), transform: None }),
            None => {
                log::warn!("skipping {} frame {}: no neighbour at offset {off}", entry.drive, entry.frame);
                return Ok(None);
            }
        }
    }
    if cfg.stereo {
        let Some(image) = load(!entry.right, entry.frame)? else {
            log::warn!("skipping {} frame {}: no stereo partner", entry.drive, entry.frame);
            return Ok(None);
        };
        let tx = if entry.right { cfg.baseline } else { -cfg.baseline };
        sources.push(SourceFrame { image, kind: SourceKind::Stereo, transform: Some(stereo_transform(tx)) });
    }
    Ok(Some(Sample {
        target,
        sources,
        intrinsics: CameraIntrinsics::from_ratios(cfg.width, cfg.height, cfg.fx_ratio, cfg.fy_ratio),
        depth: None,
    }))
}

/// Loads every entry, dropping those without neighbours.
pub fn load_kitti(cfg: &KittiConfig, entries: &[SplitEntry]) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if let Some(s) = load_kitti_sample(cfg, e)? {
            out.push(s);
        }
    }
    Ok(out)
}
