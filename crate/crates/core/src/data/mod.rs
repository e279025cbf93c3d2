//! Training samples: a deterministic textured-plane renderer, a KITTI-layout
//! loader, image file I/O and the epoch batcher.

mod batch;
mod image_io;
mod kitti;
mod synthetic;

pub use batch::{collate, Batch, Batcher};
pub use image_io::{read_gray16, read_rgb, write_gray16, write_gray8, write_rgb};
pub use kitti::{load_kitti, load_kitti_sample, load_split, KittiConfig, SplitEntry};
pub use synthetic::{gen_synthetic_sequence, PlaneSpec, SceneSpec};

use crate::geometry::{CameraIntrinsics, Mat4};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    /// Adjacent frame at the given offset from the target.
    Temporal(i32),
    Stereo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceFrame {
    pub image: Tensor,
    pub kind: SourceKind,
    /// Known transform from target-camera to source-camera coordinates:
    /// fixed for stereo partners, ground truth for synthetic frames.
    pub transform: Option<Mat4>,
}

/// A target image with its sources; images are (1, 3, H, W) in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub target: Tensor,
    pub sources: Vec<SourceFrame>,
    pub intrinsics: CameraIntrinsics,
    /// Ground-truth depth (1, 1, H, W) when available.
    pub depth: Option<Tensor>,
}
