//! Textured fronto-parallel planes seen by a pinhole camera moving along a
//! trajectory. Planes sit at constant world z; the texture is a sum of
//! oriented sinusoids in angular plane coordinates (X/depth, Y/depth), so its
//! pixel-scale frequency does not depend on how far the plane is.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{matmul4, CameraIntrinsics, DepthRange, Mat4, PoseVec};
use crate::kv::{join_list, parse_list, KvMap};
use crate::tensor::{Shape, Tensor};

use super::{Sample, SourceFrame, SourceKind};

const WAVES: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSpec {
    /// World z of the plane.
    pub depth: f64,
    /// World-space `[x0, x1, y0, y1]`; `None` is unbounded.
    pub extent: Option<[f64; 4]>,
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    /// Camera-to-world pose per frame.
    pub trajectory: Vec<PoseVec>,
    pub width: usize,
    pub height: usize,
    pub fx_ratio: f64,
    pub fy_ratio: f64,
    /// Amplitude of uniform pixel noise.
    pub noise: f64,
    /// Texture frequency range in cycles per radian.
    pub freq_min: f64,
    pub freq_max: f64,
    pub range: DepthRange,
}

impl SceneSpec {
    /// Constant-velocity trajectory starting at the origin.
    pub fn linear_trajectory(frames: usize, step: PoseVec) -> Vec<PoseVec> {
        (0..frames)
            .map(|f| {
                let k = f as f64;
                PoseVec {
                    t: step.t.map(|v| v * k),
                    euler: step.euler.map(|v| v * k),
                }
            })
            .collect()
    }

    /// A near rectangle at depth ~1 in front of an unbounded far plane at
    /// depth 4, with the camera sliding sideways.
    pub fn two_plane(width: usize, height: usize, frames: usize) -> Self {
        SceneSpec {
            planes: vec![
                PlaneSpec { depth: 1.0, extent: Some([-0.35, 0.35, -0.18, 0.18]), texture_seed: 11 },
                PlaneSpec { depth: 4.0, extent: None, texture_seed: 23 },
            ],
            trajectory: Self::linear_trajectory(frames, PoseVec::translation(0.02, 0.0, 0.0)),
            width,
            height,
            fx_ratio: crate::geometry::KITTI_FX_RATIO,
            fy_ratio: crate::geometry::KITTI_FY_RATIO,
            noise: 0.0,
            freq_min: 8.0,
            freq_max: 30.0,
            range: DepthRange::default(),
        }
    }

    /// Left half at depth 5, right half at depth 50, static camera.
    pub fn step(width: usize, height: usize) -> Self {
        SceneSpec {
            planes: vec![
                PlaneSpec { depth: 5.0, extent: Some([-1e6, 0.0, -1e6, 1e6]), texture_seed: 5 },
                PlaneSpec { depth: 50.0, extent: None, texture_seed: 50 },
            ],
            trajectory: vec![PoseVec::default(); 3],
            ..Self::two_plane(width, height, 3)
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_ratios(self.width, self.height, self.fx_ratio, self.fy_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("scene spec: {m}")));
        if self.trajectory.len() < 3 {
            return bad(format!("trajectory has {} frames, need at least 3", self.trajectory.len()));
        }
        if self.planes.is_empty() || self.width == 0 || self.height == 0 {
            return bad("need at least one plane and a non-empty image".into());
        }
        for p in &self.planes {
            if !(p.depth >= self.range.min_depth && p.depth <= self.range.max_depth) {
                return bad(format!("plane depth {} outside [{}, {}]", p.depth, self.range.min_depth, self.range.max_depth));
            }
        }
        if !(self.freq_min > 0.0 && self.freq_min <= self.freq_max && self.noise >= 0.0) {
            return bad("texture frequencies must be positive and ordered; noise non-negative".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("fx_ratio", self.fx_ratio);
        kv.insert("fy_ratio", self.fy_ratio);
        kv.insert("noise", self.noise);
        kv.insert("freq_min", self.freq_min);
        kv.insert("freq_max", self.freq_max);
        kv.insert("min_depth", self.range.min_depth);
        kv.insert("max_depth", self.range.max_depth);
        kv.insert("planes", self.planes.len());
        for (i, p) in self.planes.iter().enumerate() {
            kv.insert(format!("plane.{i}.depth"), p.depth);
            kv.insert(format!("plane.{i}.texture_seed"), p.texture_seed);
            match p.extent {
                Some(e) => kv.insert(format!("plane.{i}.extent"), join_list(&e)),
                None => kv.insert(format!("plane.{i}.extent"), "unbounded"),
            }
        }
        kv.insert("frames", self.trajectory.len());
        for (f, p) in self.trajectory.iter().enumerate() {
            kv.insert(format!("pose.{f}"), join_list(&p.to_array()));
        }
        kv
    }

    /// Reads a scene file. Instead of explicit `pose.F` lines a file may give
    /// `frames` and a per-frame `motion=tx,ty,tz,rx,ry,rz`.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = SceneSpec::two_plane(kv.require("width")?, kv.require("height")?, 3);
        let n_planes: usize = kv.require("planes")?;
        let mut planes = Vec::with_capacity(n_planes);
        for i in 0..n_planes {
            let extent = match kv.require::<String>(&format!("plane.{i}.extent"))?.as_str() {
                "unbounded" => None,
                s => {
                    let v: Vec<f64> = parse_list(s)?;
                    let e: [f64; 4] = v
                        .try_into()
                        .map_err(|_| Error::Parse(format!("plane.{i}.extent needs 4 values")))?;
                    Some(e)
                }
            };
            planes.push(PlaneSpec {
                depth: kv.require(&format!("plane.{i}.depth"))?,
                extent,
                texture_seed: kv.parsed(&format!("plane.{i}.texture_seed"))?.unwrap_or(i as u64),
            });
        }
        let frames: usize = kv.require("frames")?;
        let trajectory = match kv.get("motion") {
            Some(m) => {
                let v: Vec<f64> = parse_list(m)?;
                if v.len() != 6 {
                    return Err(Error::Parse("motion needs 6 values".into()));
                }
                Self::linear_trajectory(frames, PoseVec::from_slice(&v))
            }
            None => (0..frames)
                .map(|f| {
                    let v: Vec<f64> = parse_list(&kv.require::<String>(&format!("pose.{f}"))?)?;
                    if v.len() != 6 {
                        return Err(Error::Parse(format!("pose.{f} needs 6 values")));
                    }
                    Ok(PoseVec::from_slice(&v))
                })
                .collect::<Result<_>>()?,
        };
        let spec = SceneSpec {
            planes,
            trajectory,
            fx_ratio: kv.parsed("fx_ratio")?.unwrap_or(d.fx_ratio),
            fy_ratio: kv.parsed("fy_ratio")?.unwrap_or(d.fy_ratio),
            noise: kv.parsed("noise")?.unwrap_or(d.noise),
            freq_min: kv.parsed("freq_min")?.unwrap_or(d.freq_min),
            freq_max: kv.parsed("freq_max")?.unwrap_or(d.freq_max),
            range: DepthRange::new(
                kv.parsed("min_depth")?.unwrap_or(d.range.min_depth),
                kv.parsed("max_depth")?.unwrap_or(d.range.max_depth),
            )?,
            ..d
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    /// (frequency, direction, phase, per-channel amplitude)
    waves: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Texture {
    fn new(seed: u64, freq_min: f64, freq_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [0; 3].map(|_| rng.random_range(0.3..0.7));
        let waves = (0..WAVES)
            .map(|_| {
                let f = if freq_max > freq_min { rng.random_range(freq_min..freq_max) } else { freq_min };
                let dir = rng.random_range(0.0..TAU);
                let phase = rng.random_range(0.0..TAU);
                let amp = [0; 3].map(|_| rng.random_range(0.02..0.05));
                (f, dir, phase, amp)
            })
            .collect();
        Texture { base, waves }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.base;
        for &(f, dir, phase, amp) in &self.waves {
            let s = (TAU * f * (u * dir.cos() + v * dir.sin()) + phase).sin();
            for c in 0..3 {
                out[c] += amp[c] * s;
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }
}

struct Frame {
    image: Tensor,
    depth: Tensor,
}

fn render(spec: &SceneSpec, textures: &[Texture], pose: &PoseVec, frame: usize, rng: &mut ChaCha8Rng) -> Result<Frame> {
    let k = spec.intrinsics();
    let (h, w) = (spec.height, spec.width);
    let cam = pose.matrix(false);
    let origin = [cam[0][3], cam[1][3], cam[2][3]];
    let mut image = vec![0.0; 3 * h * w];
    let mut depth = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let ray = [(x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0];
            let dir = [0, 1, 2].map(|i| cam[i][0] * ray[0] + cam[i][1] * ray[1] + cam[i][2] * ray[2]);
            let mut best: Option<(f64, usize, [f64; 3])> = None;
            for (pi, p) in spec.planes.iter().enumerate() {
                if dir[2].abs() < 1e-12 {
                    continue;
                }
                // The ray has unit camera-z per unit of `s`, so `s` is the camera depth.
                let s = (p.depth - origin[2]) / dir[2];
                if s <= 0.0 || best.is_some_and(|(b, _, _)| s >= b) {
                    continue;
                }
                let hit = [0, 1, 2].map(|i| origin[i] + s * dir[i]);
                let inside = p.extent.is_none_or(|[x0, x1, y0, y1]| hit[0] >= x0 && hit[0] <= x1 && hit[1] >= y0 && hit[1] <= y1);
                if inside {
                    best = Some((s, pi, hit));
                }
            }
            let Some((s, pi, hit)) = best else {
                return Err(Error::Data(format!("frame {frame}: pixel ({x}, {y}) sees no plane; trajectory leaves the scene")));
            };
            if s < spec.range.min_depth {
                return Err(Error::Data(format!("frame {frame}: camera within {s} of a plane")));
            }
            let d = spec.planes[pi].depth;
            let rgb = textures[pi].sample(hit[0] / d, hit[1] / d);
            for c in 0..3 {
                let n = if spec.noise > 0.0 { rng.random_range(-spec.noise..spec.noise) } else { 0.0 };
                image[(c * h + y) * w + x] = (rgb[c] + n).clamp(0.0, 1.0);
            }
            depth[y * w + x] = s;
        }
    }
    Ok(Frame {
        image: Tensor::new(Shape::new(1, 3, h, w), image)?,
        depth: Tensor::new(Shape::new(1, 1, h, w), depth)?,
    })
}

/// One sample per interior frame, with the previous and next frames as
/// sources and their true target-to-source transforms attached.
pub fn gen_synthetic_sequence(spec: &SceneSpec, seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    let textures: Vec<Texture> = spec
        .planes
        .iter()
        .map(|p| Texture::new(p.texture_seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15), spec.freq_min, spec.freq_max))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Frame> = spec
        .trajectory
        .iter()
        .enumerate()
        .map(|(f, p)| render(spec, &textures, p, f, &mut rng))
        .collect::<Result<_>>()?;
    let k = spec.intrinsics();
    let to_source = |t: usize, s: usize| -> Mat4 { matmul4(&spec.trajectory[s].matrix(true), &spec.trajectory[t].matrix(false)) };
    Ok((1..frames.len() - 1)
        .map(|t| Sample {
            target: frames[t].image.clone(),
            sources: [t - 1, t + 1]
                .into_iter()
                .map(|s| SourceFrame {
                    image: frames[s].image.clone(),
                    kind: SourceKind::Temporal(s as i32 - t as i32),
                    transform: Some(to_source(t, s)),
                })
                .collect(),
            intrinsics: k,
            depth: Some(frames[t].depth.clone()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform_point;

    fn reproject(k: &CameraIntrinsics, t: &Mat4, x: f64, y: f64, depth: f64) -> (f64, f64) {
        k.project(transform_point(t, k.backproject(x, y, depth)))
    }

    #[test]
    fn static_camera_renders_identical_frames() {
        let mut spec = SceneSpec::two_plane(40, 16, 3);
        spec.trajectory = vec![PoseVec::default(); 3];
        let s = gen_synthetic_sequence(&spec, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].sources.iter().all(|f| f.image.bit_eq(&s[0].target)));
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = SceneSpec { noise: 0.01, ..SceneSpec::two_plane(32, 12, 4) };
        assert_eq!(gen_synthetic_sequence(&spec, 5).unwrap(), gen_synthetic_sequence(&spec, 5).unwrap());
        assert_ne!(gen_synthetic_sequence(&spec, 5).unwrap(), gen_synthetic_sequence(&spec, 6).unwrap());
    }

    #[test]
    fn x_translation_shifts_by_focal_over_depth() {
        // A single unbounded plane: every pixel moves by fx·tx/d.
        let mut spec = SceneSpec::two_plane(64, 24, 3);
        spec.planes = vec![PlaneSpec { depth: 2.0, extent: None, texture_seed: 3 }];
        let s = &gen_synthetic_sequence(&spec, 0).unwrap()[0];
        let k = spec.intrinsics();
        let t = s.sources[1].transform.unwrap();
        let (px, py) = reproject(&k, &t, 10.0, 5.0, 2.0);
        assert!((px - 10.0 + k.fx * 0.02 / 2.0).abs() < 1e-9 && (py - 5.0).abs() < 1e-12);
        assert!(s.depth.as_ref().unwrap().data().iter().all(|&d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn two_plane_depths_are_layered() {
        let spec = SceneSpec::two_plane(64, 24, 3);
        let s = &gen_synthetic_sequence(&spec, 0).unwrap()[0];
        let d = s.depth.as_ref().unwrap();
        let near = d.data().iter().filter(|&&v| (v - 1.0).abs() < 1e-9).count();
        let far = d.data().iter().filter(|&&v| (v - 4.0).abs() < 1e-9).count();
        assert_eq!(near + far, d.numel());
        assert!(near > d.numel() / 5 && far > d.numel() / 5);
    }

    #[test]
    fn leaving_the_scene_is_an_error() {
        let mut spec = SceneSpec::two_plane(16, 8, 3);
        spec.planes = vec![PlaneSpec { depth: 2.0, extent: Some([-1.0, 1.0, -1.0, 1.0]), texture_seed: 0 }];
        spec.trajectory = SceneSpec::linear_trajectory(3, PoseVec::translation(2.0, 0.0, 0.0));
        assert!(gen_synthetic_sequence(&spec, 0).is_err());
        let mut short = SceneSpec::two_plane(16, 8, 3);
        short.trajectory.truncate(2);
        assert!(gen_synthetic_sequence(&short, 0).is_err());
    }

    #[test]
    fn scene_kv_round_trip() {
        let spec = SceneSpec::two_plane(32, 16, 5);
        assert_eq!(SceneSpec::from_kv(&spec.to_kv()).unwrap(), spec);
        let mut kv = spec.to_kv();
        for f in 0..5 {
            kv = KvMap::parse(&kv.emit().replace(&format!("pose.{f}="), &format!("unused_{f}="))).unwrap();
        }
        kv.insert("motion", "0.02,0,0,0,0,0");
        assert_eq!(SceneSpec::from_kv(&kv).unwrap().trajectory, spec.trajectory);
    }
}
