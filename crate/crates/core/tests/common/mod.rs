//! Explicit per-pixel loop oracles shared by the integration tests.
#![allow(dead_code)]

use hrdepth::geometry::{transform_point, CameraIntrinsics, DepthRange, Mat4};
use hrdepth::losses::LossConfig;
use hrdepth::{Shape, Tensor};

/// Reflect index; a length-1 axis replicates.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    j as usize
}

/// Photometric error map (H×W, averaged over channels) of sample 0.
pub fn photometric(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Vec<f64> {
    let s = a.shape();
    let r = (cfg.ssim_window / 2) as isize;
    let area = (cfg.ssim_window * cfg.ssim_window) as f64;
    let mut out = vec![0.0; s.h * s.w];
    for y in 0..s.h {
        for x in 0..s.w {
            let mut acc = 0.0;
            for c in 0..s.c {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = reflect(y as isize + dy, s.h);
                        let xx = reflect(x as isize + dx, s.w);
                        let (p, q) = (a.at(0, c, yy, xx), b.at(0, c, yy, xx));
                        ma += p;
                        mb += q;
                        aa += p * p;
                        bb += q * q;
                        ab += p * q;
                    }
                }
                let (ma, mb) = (ma / area, mb / area);
                let (va, vb, cov) = (aa / area - ma * ma, bb / area - mb * mb, ab / area - ma * mb);
                let ssim = (2.0 * ma * mb + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
                    / ((ma * ma + mb * mb + cfg.ssim_c1) * (va + vb + cfg.ssim_c2));
                let l1 = (a.at(0, c, y, x) - b.at(0, c, y, x)).abs();
                acc += cfg.alpha / 2.0 * (1.0 - ssim) + (1.0 - cfg.alpha) * l1;
            }
            out[y * s.w + x] = acc / s.c as f64;
        }
    }
    out
}

/// Half-pixel bilinear resize of sample 0.
pub fn resize(t: &Tensor, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let tap = |o: usize, n_in: usize, n_out: usize| {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        (i0, (i0 + 1).min(n_in - 1), src - i0 as f64)
    };
    Tensor::from_fn(Shape::new(1, s.c, h, w), |_, c, y, x| {
        let (y0, y1, fy) = tap(y, s.h, h);
        let (x0, x1, fx) = tap(x, s.w, w);
        let top = t.at(0, c, y0, x0) * (1.0 - fx) + t.at(0, c, y0, x1) * fx;
        let bot = t.at(0, c, y1, x0) * (1.0 - fx) + t.at(0, c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Border-clamped bilinear read at pixel coordinates.
pub fn sample(img: &Tensor, c: usize, px: f64, py: f64) -> f64 {
    let s = img.shape();
    let px = px.clamp(0.0, (s.w - 1) as f64);
    let py = py.clamp(0.0, (s.h - 1) as f64);
    let (x0, y0) = (px.floor() as usize, py.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(s.w - 1), (y0 + 1).min(s.h - 1));
    let (fx, fy) = (px - x0 as f64, py - y0 as f64);
    let top = img.at(0, c, y0, x0) * (1.0 - fx) + img.at(0, c, y0, x1) * fx;
    let bot = img.at(0, c, y1, x0) * (1.0 - fx) + img.at(0, c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Source warped into the target view through `depth` and `m`.
pub fn warp(source: &Tensor, depth: &Tensor, k: &CameraIntrinsics, m: &Mat4) -> Tensor {
    let s = source.shape();
    Tensor::from_fn(s, |_, c, y, x| {
        let d = depth.at(0, 0, y, x);
        let p = transform_point(m, k.backproject(x as f64, y as f64, d));
        let (px, py) = k.project(p);
        sample(source, c, px, py)
    })
}

/// Edge-aware smoothness of mean-normalized disparity.
pub fn smoothness(disp: &Tensor, image: &Tensor) -> f64 {
    let s = disp.shape();
    let mean = disp.data().iter().sum::<f64>() / disp.numel() as f64;
    let c = image.shape().c;
    let grad = |y0: usize, x0: usize, y1: usize, x1: usize| {
        let dd = (disp.at(0, 0, y1, x1) - disp.at(0, 0, y0, x0)).abs() / mean;
        let di: f64 = (0..c).map(|ch| (image.at(0, ch, y1, x1) - image.at(0, ch, y0, x0)).abs()).sum::<f64>() / c as f64;
        dd * (-di).exp()
    };
    let mut sx = 0.0;
    for y in 0..s.h {
        for x in 0..s.w - 1 {
            sx += grad(y, x, y, x + 1);
        }
    }
    let mut sy = 0.0;
    for y in 0..s.h - 1 {
        for x in 0..s.w {
            sy += grad(y, x, y + 1, x);
        }
    }
    sx / (s.h * (s.w - 1)) as f64 + sy / ((s.h - 1) * s.w) as f64
}

/// Multi-scale objective without auto-masking, batch of one.
pub fn total_loss(
    disps: &[Tensor],
    target: &Tensor,
    sources: &[Tensor],
    transforms: &[Mat4],
    k: &CameraIntrinsics,
    range: DepthRange,
    cfg: &LossConfig,
) -> f64 {
    let ts = target.shape();
    let mut total = 0.0;
    for disp in disps {
        let full = resize(disp, ts.h, ts.w);
        let depth = Tensor::from_fn(full.shape(), |_, _, y, x| range.depth(full.at(0, 0, y, x)));
        let errors: Vec<Vec<f64>> = sources
            .iter()
            .zip(transforms)
            .map(|(s, m)| photometric(target, &warp(s, &depth, k, m), cfg))
            .collect();
        let n = ts.h * ts.w;
        let l_re = (0..n).map(|p| errors.iter().map(|e| e[p]).fold(f64::INFINITY, f64::min)).sum::<f64>() / n as f64;
        let ds = disp.shape();
        let image = resize(target, ds.h, ds.w);
        total += l_re + cfg.lambda_smooth * smoothness(disp, &image);
    }
    total / disps.len() as f64
}

/// Reference depth metrics by explicit loops over valid pixels.
pub fn metrics(pred: &Tensor, gt: &Tensor, median_scale: bool, cap: f64) -> [f64; 7] {
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..gt.numel() {
        let gv = gt.data()[i];
        if gv > 0.0 && gv <= cap {
            p.push(pred.data()[i]);
            g.push(gv);
        }
    }
    let med = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    };
    if median_scale {
        let ratio = med(&g) / med(&p);
        for v in &mut p {
            *v *= ratio;
        }
    }
    let n = p.len() as f64;
    let (mut abs_rel, mut sq_rel, mut rmse, mut rmse_log) = (0.0, 0.0, 0.0, 0.0);
    let mut d = [0.0; 3];
    for (pv, gv) in p.iter().zip(&g) {
        let pv = pv.clamp(1e-3, cap);
        abs_rel += (pv - gv).abs() / gv;
        sq_rel += (pv - gv).powi(2) / gv;
        rmse += (pv - gv).powi(2);
        rmse_log += (pv.ln() - gv.ln()).powi(2);
        let ratio = (pv / gv).max(gv / pv);
        for (k, t) in [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
            if ratio < *t {
                d[k] += 1.0;
            }
        }
    }
    [abs_rel / n, sq_rel / n, (rmse / n).sqrt(), (rmse_log / n).sqrt(), d[0] / n, d[1] / n, d[2] / n]
}
