//! Depth metrics with optional median scaling and a depth cap, the
//! interpolation-gap analyzer that stratifies upsampling error by
//! ground-truth depth-gradient magnitude, and report emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::write_gray8;
use crate::error::{contract_err, Error, Result};
use crate::kv::{join_list, parse_list, KvMap};
use crate::ops::{resize_nearest, resize_tensor};
use crate::tensor::{Shape, Tensor};

pub const MIN_PRED_DEPTH: f64 = 1e-3;
pub const DEFAULT_CAP: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const NAMES: [&'static str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"];

    pub fn to_array(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        DepthMetrics {
            abs_rel: v[0],
            sq_rel: v[1],
            rmse: v[2],
            rmse_log: v[3],
            delta1: v[4],
            delta2: v[5],
            delta3: v[6],
        }
    }

    /// Element-wise mean over several images.
    pub fn mean(all: &[DepthMetrics]) -> Result<Self> {
        if all.is_empty() {
            return contract_err("depth_metrics", "no metrics to average");
        }
        let mut acc = [0.0; 7];
        for m in all {
            for (a, v) in acc.iter_mut().zip(m.to_array()) {
                *a += v;
            }
        }
        Ok(Self::from_array(acc.map(|a| a / all.len() as f64)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    pub median_scale: bool,
    pub cap: f64,
    /// Restrict to the standard Eigen evaluation crop.
    pub eigen_crop: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            median_scale: true,
            cap: DEFAULT_CAP,
            eigen_crop: false,
        }
    }
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn in_eigen_crop(y: usize, x: usize, h: usize, w: usize) -> bool {
    let (hf, wf) = (h as f64, w as f64);
    let (y0, y1) = ((0.408_108_11 * hf) as usize, (0.991_891_89 * hf) as usize);
    let (x0, x1) = ((0.035_947_71 * wf) as usize, (0.964_052_29 * wf) as usize);
    (y0..y1).contains(&y) && (x0..x1).contains(&x)
}

/// Valid pixels: ground truth in (0, cap], inside the crop when enabled.
fn valid_pairs(pred: &Tensor, gt: &Tensor, opts: &MetricOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != gt.shape() {
        return contract_err("depth_metrics", format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape()));
    }
    if !(opts.cap > 0.0) {
        return contract_err("depth_metrics", format!("cap {} must be positive", opts.cap));
    }
    let s = gt.shape();
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..s.numel() {
        let gv = gt.data()[i];
        let (y, x) = ((i / s.w) % s.h, i % s.w);
        if gv > 0.0 && gv <= opts.cap && (!opts.eigen_crop || in_eigen_crop(y, x, s.h, s.w)) {
            p.push(pred.data()[i]);
            g.push(gv);
        }
    }
    if g.is_empty() {
        return contract_err("depth_metrics", "no valid ground-truth pixels");
    }
    Ok((p, g))
}

pub fn depth_metrics(pred: &Tensor, gt: &Tensor, opts: &MetricOptions) -> Result<DepthMetrics> {
    let (mut p, g) = valid_pairs(pred, gt, opts)?;
    if opts.median_scale {
        let ratio = median(&mut g.clone()) / median(&mut p.clone());
        p.iter_mut().for_each(|v| *v *= ratio);
    }
    p.iter_mut().for_each(|v| *v = v.clamp(MIN_PRED_DEPTH, opts.cap));
    let n = g.len() as f64;
    let mut sums = [0.0; 7];
    for (&pv, &gv) in p.iter().zip(&g) {
        let d = pv - gv;
        let ratio = (pv / gv).max(gv / pv);
        let terms = [
            d.abs() / gv,
            d * d / gv,
            d * d,
            (pv.ln() - gv.ln()).powi(2),
            (ratio < 1.25) as u8 as f64,
            (ratio < 1.25f64.powi(2)) as u8 as f64,
            (ratio < 1.25f64.powi(3)) as u8 as f64,
        ];
        for (s, t) in sums.iter_mut().zip(terms) {
            *s += t;
        }
    }
    let m = sums.map(|s| s / n);
    Ok(DepthMetrics {
        abs_rel: m[0],
        sq_rel: m[1],
        rmse: m[2].sqrt(),
        rmse_log: m[3].sqrt(),
        delta1: m[4],
        delta2: m[5],
        delta3: m[6],
    })
}

/// One gradient band of the interpolation analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub count: usize,
    /// Mean abs_rel of the full-resolution prediction; 0 for an empty band.
    pub hr: f64,
    /// Low-resolution prediction brought back by nearest-neighbour lookup.
    pub lr: f64,
    /// Low-resolution prediction brought back by bilinear upsampling.
    pub up: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBandReport {
    pub downscale: usize,
    /// Band boundaries on |∇gt|: the 25th, 50th and 75th percentiles.
    pub thresholds: [f64; 3],
    pub bands: Vec<Band>,
    pub valid: usize,
}

/// Forward-difference gradient magnitude, with the last row and column
/// reusing zero differences.
pub fn gradient_magnitude(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let v = t.at(n, c, y, x);
        let dx = if x + 1 < s.w { t.at(n, c, y, x + 1) - v } else { 0.0 };
        let dy = if y + 1 < s.h { t.at(n, c, y + 1, x) - v } else { 0.0 };
        (dx * dx + dy * dy).sqrt()
    })
}

/// Quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Band of a gradient magnitude: the number of thresholds strictly below it.
fn band_of(g: f64, thresholds: &[f64; 3]) -> usize {
    thresholds.iter().filter(|&&t| g > t).count()
}

/// Per-pixel abs_rel maps of the HR prediction, its nearest-upsampled and
/// bilinear-upsampled low-resolution versions; zero where gt is invalid.
pub struct InterpMaps {
    pub hr: Tensor,
    pub lr: Tensor,
    pub up: Tensor,
}

fn abs_rel_map(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    pred.zip_map(gt, |p, g| if g > 0.0 { (p - g).abs() / g } else { 0.0 })
}

pub fn interp_maps(hr_depth: &Tensor, gt: &Tensor, downscale: usize) -> Result<InterpMaps> {
    if ![2, 4, 8].contains(&downscale) {
        return contract_err("interp_gap_analysis", format!("downscale {downscale} not in {{2, 4, 8}}"));
    }
    let s = hr_depth.shape();
    if s != gt.shape() || s.c != 1 {
        return contract_err("interp_gap_analysis", format!("prediction {s:?} vs ground truth {:?}", gt.shape()));
    }
    if s.h % downscale != 0 || s.w % downscale != 0 {
        return contract_err("interp_gap_analysis", format!("{}x{} not divisible by {downscale}", s.w, s.h));
    }
    let low = resize_tensor(hr_depth, s.h / downscale, s.w / downscale)?;
    Ok(InterpMaps {
        hr: abs_rel_map(hr_depth, gt)?,
        lr: abs_rel_map(&resize_nearest(&low, s.h, s.w)?, gt)?,
        up: abs_rel_map(&resize_tensor(&low, s.h, s.w)?, gt)?,
    })
}

pub fn interp_gap_analysis(hr_depth: &Tensor, gt: &Tensor, downscale: usize) -> Result<GradientBandReport> {
    let maps = interp_maps(hr_depth, gt, downscale)?;
    let grad = gradient_magnitude(gt);
    let valid: Vec<usize> = (0..gt.numel()).filter(|&i| gt.data()[i] > 0.0).collect();
    if valid.is_empty() {
        return contract_err("interp_gap_analysis", "no valid ground-truth pixels");
    }
    let mut mags: Vec<f64> = valid.iter().map(|&i| grad.data()[i]).collect();
    mags.sort_by(f64::total_cmp);
    let thresholds = [0.25, 0.5, 0.75].map(|q| quantile(&mags, q));
    let mut bands = vec![Band { count: 0, hr: 0.0, lr: 0.0, up: 0.0 }; 4];
    for &i in &valid {
        let b = &mut bands[band_of(grad.data()[i], &thresholds)];
        b.count += 1;
        b.hr += maps.hr.data()[i];
        b.lr += maps.lr.data()[i];
        b.up += maps.up.data()[i];
    }
    for b in &mut bands {
        if b.count > 0 {
            let n = b.count as f64;
            b.hr /= n;
            b.lr /= n;
            b.up /= n;
        }
    }
    Ok(GradientBandReport {
        downscale,
        thresholds,
        bands,
        valid: valid.len(),
    })
}

impl GradientBandReport {
    pub fn top(&self) -> &Band {
        self.bands.last().expect("four bands")
    }

    pub fn bottom(&self) -> &Band {
        &self.bands[0]
    }

    /// Upsampled-LR error never decreases from one non-empty band to the next.
    pub fn up_is_monotone(&self) -> bool {
        let v: Vec<f64> = self.bands.iter().filter(|b| b.count > 0).map(|b| b.up).collect();
        v.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "interpolation gap, downscale {}x, {} valid pixels", self.downscale, self.valid);
        let _ = writeln!(s, "gradient thresholds: {}", join_list(&self.thresholds));
        let _ = writeln!(s, "{:<6} {:>10} {:>12} {:>12} {:>12}", "band", "pixels", "hr", "lr_nearest", "lr_bilinear");
        for (i, b) in self.bands.iter().enumerate() {
            let _ = writeln!(s, "{:<6} {:>10} {:>12.6} {:>12.6} {:>12.6}", i, b.count, b.hr, b.lr, b.up);
        }
        s
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("downscale", self.downscale);
        kv.insert("valid", self.valid);
        kv.insert("thresholds", join_list(&self.thresholds));
        kv.insert("bands", self.bands.len());
        for (i, b) in self.bands.iter().enumerate() {
            kv.insert(format!("band.{i}.count"), b.count);
            kv.insert(format!("band.{i}.hr"), b.hr);
            kv.insert(format!("band.{i}.lr"), b.lr);
            kv.insert(format!("band.{i}.up"), b.up);
        }
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let t: Vec<f64> = parse_list(&kv.require::<String>("thresholds")?)?;
        let thresholds: [f64; 3] = t.try_into().map_err(|_| Error::Parse("thresholds need 3 values".into()))?;
        let n: usize = kv.require("bands")?;
        let bands = (0..n)
            .map(|i| {
                Ok(Band {
                    count: kv.require(&format!("band.{i}.count"))?,
                    hr: kv.require(&format!("band.{i}.hr"))?,
                    lr: kv.require(&format!("band.{i}.lr"))?,
                    up: kv.require(&format!("band.{i}.up"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GradientBandReport {
            downscale: kv.require("downscale")?,
            thresholds,
            bands,
            valid: kv.require("valid")?,
        })
    }
}

/// Writes an error map scaled so `max_err` is white.
pub fn write_error_image(path: &Path, err: &Tensor, max_err: f64) -> Result<()> {
    let scale = if max_err > 0.0 { 1.0 / max_err } else { 0.0 };
    let img = err.batch_item(0);
    write_gray8(path, &img.map(|v| (v * scale).min(1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub width: usize,
    pub height: usize,
    pub metrics: DepthMetrics,
}

/// Rows of (method, resolution, seven metrics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<MetricsRow>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<24} {:>10}", "method", "resolution");
        for n in DepthMetrics::NAMES {
            let _ = write!(s, " {n:>9}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<24} {:>10}", r.method, format!("{}x{}", r.width, r.height));
            for v in r.metrics.to_array() {
                let _ = write!(s, " {v:>9.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("rows", self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            kv.insert(format!("row.{i}.method"), &r.method);
            kv.insert(format!("row.{i}.resolution"), format!("{}x{}", r.width, r.height));
            for (n, v) in DepthMetrics::NAMES.iter().zip(r.metrics.to_array()) {
                kv.insert(format!("row.{i}.{n}"), v);
            }
        }
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let n: usize = kv.require("rows")?;
        let rows = (0..n)
            .map(|i| {
                let res: String = kv.require(&format!("row.{i}.resolution"))?;
                let (w, h) = parse_resolution(&res)?;
                let mut v = [0.0; 7];
                for (slot, name) in v.iter_mut().zip(DepthMetrics::NAMES) {
                    *slot = kv.require(&format!("row.{i}.{name}"))?;
                }
                Ok(MetricsRow {
                    method: kv.require(&format!("row.{i}.method"))?,
                    width: w,
                    height: h,
                    metrics: DepthMetrics::from_array(v),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Report { rows })
    }
}

/// Parses `WxH`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parse(format!("resolution {s:?} is not WxH"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let (w, h) = (w.trim().parse::<usize>().map_err(|_| bad())?, h.trim().parse::<usize>().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// A two-plane step depth map: `near` left of the vertical midline, `far` right of it.
pub fn step_depth(width: usize, height: usize, near: f64, far: f64) -> Tensor {
    Tensor::from_fn(Shape::new(1, 1, height, width), |_, _, _, x| if 2 * x + 1 < width { near } else { far })
}
