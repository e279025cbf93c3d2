//! Rigid-scene geometry for view synthesis: camera intrinsics, disparity to
//! depth, 6-DOF pose to transform, and the back-project/transform/project
//! warp producing a sampling grid.
//!
//! Pixel centers sit at integer coordinates; the principal point of a
//! centered camera is ((W−1)/2, (H−1)/2).

use std::fmt::Write as _;
use std::path::Path;

use crate::autograd::Var;
use crate::error::{contract_err, shape_err, Error, Result};
use crate::ops::{grid_sample_bilinear, normalize_coord};
use crate::tensor::{Shape, Tensor};

/// Depth below which a transformed point counts as behind the camera.
pub const MIN_Z: f64 = 1e-6;

/// Grid coordinate assigned to points behind the camera; far outside [-1, 1].
pub const INVALID_COORD: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Dataset-average focal lengths as fractions of image width and height.
pub const KITTI_FX_RATIO: f64 = 0.58;
pub const KITTI_FY_RATIO: f64 = 1.92;

impl CameraIntrinsics {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, fx: f64, fy: f64) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Centered camera with focal lengths given as fractions of the image size.
    pub fn from_ratios(width: usize, height: usize, fx_ratio: f64, fy_ratio: f64) -> Self {
        Self::centered(width, height, fx_ratio * width as f64, fy_ratio * height as f64)
    }

    pub fn kitti_like(width: usize, height: usize) -> Self {
        Self::from_ratios(width, height, KITTI_FX_RATIO, KITTI_FY_RATIO)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if !ok {
            return contract_err("intrinsics", format!("{self:?}"));
        }
        Ok(())
    }

    /// The same camera for an image resized to `width`×`height`.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        [depth * (x - self.cx) / self.fx, depth * (y - self.cy) / self.fy, depth]
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange {
            min_depth: 0.1,
            max_depth: 100.0,
        }
    }
}

impl DepthRange {
    pub fn new(min_depth: f64, max_depth: f64) -> Result<Self> {
        if !(min_depth > 0.0 && min_depth < max_depth) {
            return contract_err("depth_range", format!("need 0 < {min_depth} < {max_depth}"));
        }
        Ok(DepthRange { min_depth, max_depth })
    }

    /// Coefficients (a, b) of depth = 1 / (a·disp + b).
    pub fn coefficients(&self) -> (f64, f64) {
        (1.0 / self.min_depth - 1.0 / self.max_depth, 1.0 / self.max_depth)
    }

    pub fn depth(&self, disp: f64) -> f64 {
        let (a, b) = self.coefficients();
        1.0 / (a * disp + b)
    }

    /// Inverse of [`DepthRange::depth`].
    pub fn disparity(&self, depth: f64) -> f64 {
        let (a, b) = self.coefficients();
        (1.0 / depth - b) / a
    }
}

pub fn disp_to_depth(disp: Var<'_>, range: DepthRange) -> Var<'_> {
    let (a, b) = range.coefficients();
    disp.scale(a).add_scalar(b).recip()
}

pub fn disp_to_depth_tensor(disp: &Tensor, range: DepthRange) -> Tensor {
    disp.map(|d| range.depth(d))
}

/// Camera file: four lines `fx fy cx cy`, `width height`, `min_depth max_depth`, `baseline`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    pub range: DepthRange,
    pub baseline: f64,
}

impl CameraFile {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("intrinsics value {v:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let [k, size, range, base] = &lines[..] else {
            return Err(Error::Parse(format!("intrinsics file needs 4 lines, found {}", lines.len())));
        };
        let (&[fx, fy, cx, cy], &[w, h], &[lo, hi], &[b]) = (&k[..], &size[..], &range[..], &base[..]) else {
            return Err(Error::Parse("intrinsics lines need 4, 2, 2 and 1 values".into()));
        };
        if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 {
            return Err(Error::Parse(format!("image size {w}x{h} must be positive integers")));
        }
        let intrinsics = CameraIntrinsics { fx, fy, cx, cy, width: w as usize, height: h as usize };
        intrinsics.validate()?;
        Ok(CameraFile {
            intrinsics,
            range: DepthRange::new(lo, hi)?,
            baseline: b,
        })
    }

    pub fn emit(&self) -> String {
        let k = &self.intrinsics;
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {} {}", k.fx, k.fy, k.cx, k.cy);
        let _ = writeln!(s, "{} {}", k.width, k.height);
        let _ = writeln!(s, "{} {}", self.range.min_depth, self.range.max_depth);
        let _ = writeln!(s, "{}", self.baseline);
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Relative motion: translation then Euler angles in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseVec {
    pub t: [f64; 3],
    pub euler: [f64; 3],
}

impl PoseVec {
    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        PoseVec {
            t: [tx, ty, tz],
            euler: [0.0; 3],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.t[0], self.t[1], self.t[2], self.euler[0], self.euler[1], self.euler[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        PoseVec {
            t: [v[0], v[1], v[2]],
            euler: [v[3], v[4], v[5]],
        }
    }

    /// Stacks poses into a (N, 6, 1, 1) tensor.
    pub fn stack(poses: &[PoseVec]) -> Tensor {
        Tensor::from_fn(Shape::new(poses.len(), 6, 1, 1), |n, c, _, _| poses[n].to_array()[c])
    }

    pub fn matrix(&self, invert: bool) -> Mat4 {
        compose(&rotation(self.euler), self.t, invert)
    }
}

pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY4: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose3(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn rot_x(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]],
    )
}

fn rot_y(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (
        [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        [[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]],
    )
}

fn rot_z(a: f64) -> (Mat3, Mat3) {
    let (s, c) = a.sin_cos();
    (
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]],
    )
}

/// R = Rz·Ry·Rx.
pub fn rotation(euler: [f64; 3]) -> Mat3 {
    let (rx, _) = rot_x(euler[0]);
    let (ry, _) = rot_y(euler[1]);
    let (rz, _) = rot_z(euler[2]);
    matmul3(&rz, &matmul3(&ry, &rx))
}

/// Partial derivatives of R with respect to (rx, ry, rz).
fn rotation_partials(euler: [f64; 3]) -> [Mat3; 3] {
    let (rx, drx) = rot_x(euler[0]);
    let (ry, dry) = rot_y(euler[1]);
    let (rz, drz) = rot_z(euler[2]);
    [
        matmul3(&rz, &matmul3(&ry, &drx)),
        matmul3(&rz, &matmul3(&dry, &rx)),
        matmul3(&drz, &matmul3(&ry, &rx)),
    ]
}

/// `[R | t]`, or its inverse `[Rᵀ | −Rᵀt]`.
pub fn compose(r: &Mat3, t: [f64; 3], invert: bool) -> Mat4 {
    let (r, t) = if invert {
        let rt = transpose3(r);
        let ti = [0, 1, 2].map(|i| -(0..3).map(|k| rt[i][k] * t[k]).sum::<f64>());
        (rt, ti)
    } else {
        (*r, t)
    };
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

pub fn matmul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn transform_point(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
}

/// Stereo partner transform: identity rotation, horizontal offset `tx`.
pub fn stereo_transform(tx: f64) -> Mat4 {
    PoseVec::translation(tx, 0.0, 0.0).matrix(false)
}

/// Packs per-sample matrices into a (N, 1, 4, 4) tensor.
pub fn matrices_tensor(ms: &[Mat4]) -> Tensor {
    Tensor::from_fn(Shape::new(ms.len(), 1, 4, 4), |n, _, i, j| ms[n][i][j])
}

pub fn tensor_matrix(t: &Tensor, n: usize) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = t.at(n, 0, i, j);
        }
    }
    m
}

/// Maps poses (N, 6, 1, 1) to transforms (N, 1, 4, 4), differentiably.
pub fn pose_to_matrix(pose: Var<'_>, invert: bool) -> Result<Var<'_>> {
    let ps = pose.shape();
    if ps.c != 6 || ps.h != 1 || ps.w != 1 {
        return shape_err("pose_to_matrix", format!("pose {ps:?} must be (N, 6, 1, 1)"));
    }
    let pv = pose.value();
    let poses: Vec<PoseVec> = (0..ps.n).map(|n| PoseVec::from_slice(&pv.data()[n * 6..n * 6 + 6])).collect();
    let mats: Vec<Mat4> = poses.iter().map(|p| p.matrix(invert)).collect();
    let y = matrices_tensor(&mats);
    Ok(pose.tape().record(y, &[pose], move |g, _| {
        let mut dp = vec![0.0; ps.numel()];
        for (n, p) in poses.iter().enumerate() {
            let gm = tensor_matrix(g, n);
            let r = rotation(p.euler);
            // Gradients with respect to R and t of the forward (non-inverted) transform.
            let mut g_r = [[0.0; 3]; 3];
            let mut g_t = [0.0; 3];
            if invert {
                let g_ti = [gm[0][3], gm[1][3], gm[2][3]];
                for i in 0..3 {
                    for j in 0..3 {
                        // Rᵀ block and t' = −Rᵀt.
                        g_r[i][j] = gm[j][i] - g_ti[j] * p.t[i];
                    }
                    g_t[i] = -(0..3).map(|j| r[i][j] * g_ti[j]).sum::<f64>();
                }
            } else {
                for i in 0..3 {
                    g_r[i].copy_from_slice(&gm[i][..3]);
                    g_t[i] = gm[i][3];
                }
            }
            let partials = rotation_partials(p.euler);
            let d = &mut dp[n * 6..n * 6 + 6];
            d[..3].copy_from_slice(&g_t);
            for (a, dr) in partials.iter().enumerate() {
                d[3 + a] = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| g_r[i][j] * dr[i][j]).sum();
            }
        }
        vec![Some(Tensor::from_vec(ps, dp))]
    }))
}

/// Sampling grid (N, 2, H, W) that pulls, for every target pixel, the source
/// pixel seeing the same scene point, plus a validity mask (1 where the
/// point is in front of the source camera and lands inside the frame).
pub fn warp_grid<'t>(depth: Var<'t>, k: &CameraIntrinsics, transform: Var<'t>) -> Result<(Var<'t>, Tensor)> {
    let ds = depth.shape();
    let ts = transform.shape();
    if ds.c != 1 || ts != Shape::new(ds.n, 1, 4, 4) {
        return shape_err("warp_grid", format!("depth {ds:?} with transform {ts:?}"));
    }
    if ds.h != k.height || ds.w != k.width {
        return shape_err("warp_grid", format!("depth {ds:?} for a {}x{} camera", k.width, k.height));
    }
    let dv = depth.value();
    if !dv.is_finite() {
        return Err(Error::NonFinite("warp_grid depth".into()));
    }
    if dv.data().iter().any(|&d| d <= 0.0) {
        return contract_err("warp_grid", "depth must be positive");
    }
    let tv = transform.value();
    let (h, w) = (ds.h, ds.w);
    let plane = ds.plane();
    let k = *k;
    let mut grid = vec![0.0; ds.n * 2 * plane];
    let mut mask = vec![0.0; ds.n * plane];
    // Per pixel: transformed point and the ray direction K⁻¹[x, y, 1].
    let mut cache = Vec::with_capacity(ds.n * plane);
    for n in 0..ds.n {
        let m = tensor_matrix(&tv, n);
        // Projection through an identity transform returns the lattice itself.
        let identity = m == IDENTITY4;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let ray = [(x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0];
                let d = dv.data()[n * plane + p];
                let q = transform_point(&m, [d * ray[0], d * ray[1], d]);
                let (gu, gv, valid) = if q[2] > MIN_Z {
                    let (px, py) = if identity { (x as f64, y as f64) } else { k.project(q) };
                    let inside = px > -0.5 && px < w as f64 - 0.5 && py > -0.5 && py < h as f64 - 0.5;
                    (normalize_coord(px, w), normalize_coord(py, h), inside)
                } else {
                    (INVALID_COORD, INVALID_COORD, false)
                };
                grid[n * 2 * plane + p] = gu;
                grid[(n * 2 + 1) * plane + p] = gv;
                mask[n * plane + p] = if valid { 1.0 } else { 0.0 };
                cache.push((ray, q));
            }
        }
    }
    let grid_t = Tensor::from_vec(Shape::new(ds.n, 2, h, w), grid);
    let mask = Tensor::from_vec(Shape::new(ds.n, 1, h, w), mask);
    let var = depth.tape().record(grid_t, &[depth, transform], move |g, needs| {
        let mut dd = needs[0].then(|| vec![0.0; ds.numel()]);
        let mut dt = needs[1].then(|| vec![0.0; ts.numel()]);
        for n in 0..ds.n {
            let m = tensor_matrix(&tv, n);
            for p in 0..plane {
                let (ray, q) = cache[n * plane + p];
                if q[2] <= MIN_Z {
                    continue;
                }
                let gu = g.data()[n * 2 * plane + p];
                let gv = g.data()[(n * 2 + 1) * plane + p];
                // u = (2/W)(fx·X/Z + cx) + 1/W − 1, v likewise.
                let su = 2.0 * k.fx / w as f64;
                let sv = 2.0 * k.fy / h as f64;
                let z = q[2];
                let g_q = [gu * su / z, gv * sv / z, -(gu * su * q[0] + gv * sv * q[1]) / (z * z)];
                let d = dv.data()[n * plane + p];
                if let Some(dd) = dd.as_deref_mut() {
                    dd[n * plane + p] = (0..3)
                        .map(|i| g_q[i] * (m[i][0] * ray[0] + m[i][1] * ray[1] + m[i][2]))
                        .sum();
                }
                if let Some(dt) = dt.as_deref_mut() {
                    let src = [d * ray[0], d * ray[1], d, 1.0];
                    for i in 0..3 {
                        for j in 0..4 {
                            dt[n * 16 + i * 4 + j] += g_q[i] * src[j];
                        }
                    }
                }
            }
        }
        vec![
            dd.map(|v| Tensor::from_vec(ds, v)),
            dt.map(|v| Tensor::from_vec(ts, v)),
        ]
    });
    Ok((var, mask))
}

/// Warps `source` into the target view with border clamping.
pub fn synthesize_view<'t>(source: Var<'t>, grid: Var<'t>) -> Result<Var<'t>> {
    grid_sample_bilinear(source, grid, true)
}
