//! Photometric and regularization objectives: SSIM, the SSIM/L1 reprojection
//! error, per-pixel minimum over sources, edge-aware smoothness, the
//! multi-scale total, and teacher→student disparity distillation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::autograd::Var;
use crate::error::{contract_err, shape_err, Error, Result};
use crate::geometry::{disp_to_depth, synthesize_view, warp_grid, CameraIntrinsics, DepthRange};
use crate::kv::{join_list, parse_list, KvMap};
use crate::ops::{avg_pool_reflect, bilinear_resize, channel_mean, diff_x, diff_y, global_avg_pool, minimum_of, mul_channels, resize_tensor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the SSIM term in the photometric blend.
    pub alpha: f64,
    pub lambda_smooth: f64,
    pub num_scales: usize,
    pub automask: bool,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.85,
            lambda_smooth: 1e-3,
            num_scales: 4,
            automask: false,
            ssim_window: 3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return contract_err("loss_config", format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.num_scales == 0 {
            return contract_err("loss_config", "num_scales must be at least 1");
        }
        if self.ssim_window % 2 == 0 {
            return contract_err("loss_config", format!("ssim_window {} must be odd", self.ssim_window));
        }
        if !(self.lambda_smooth >= 0.0 && self.ssim_c1 >= 0.0 && self.ssim_c2 >= 0.0) {
            return contract_err("loss_config", "weights and constants must be non-negative");
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert(format!("{prefix}alpha"), self.alpha);
        kv.insert(format!("{prefix}lambda_smooth"), self.lambda_smooth);
        kv.insert(format!("{prefix}num_scales"), self.num_scales);
        kv.insert(format!("{prefix}automask"), self.automask);
        kv.insert(format!("{prefix}ssim_window"), self.ssim_window);
        kv.insert(format!("{prefix}ssim_c1"), self.ssim_c1);
        kv.insert(format!("{prefix}ssim_c2"), self.ssim_c2);
        kv
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        let d = LossConfig::default();
        let get = |k: &str| format!("{prefix}{k}");
        let cfg = LossConfig {
            alpha: kv.parsed(&get("alpha"))?.unwrap_or(d.alpha),
            lambda_smooth: kv.parsed(&get("lambda_smooth"))?.unwrap_or(d.lambda_smooth),
            num_scales: kv.parsed(&get("num_scales"))?.unwrap_or(d.num_scales),
            automask: kv.parsed(&get("automask"))?.unwrap_or(d.automask),
            ssim_window: kv.parsed(&get("ssim_window"))?.unwrap_or(d.ssim_window),
            ssim_c1: kv.parsed(&get("ssim_c1"))?.unwrap_or(d.ssim_c1),
            ssim_c2: kv.parsed(&get("ssim_c2"))?.unwrap_or(d.ssim_c2),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-pixel SSIM map with the same shape as the inputs.
pub fn ssim<'t>(a: Var<'t>, b: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    if a.shape() != b.shape() {
        return shape_err("ssim", format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let k = cfg.ssim_window;
    let mu_a = avg_pool_reflect(a, k)?;
    let mu_b = avg_pool_reflect(b, k)?;
    let mu_ab = mu_a.mul(mu_b)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let var_a = avg_pool_reflect(a.square(), k)?.sub(mu_aa)?;
    let var_b = avg_pool_reflect(b.square(), k)?.sub(mu_bb)?;
    let cov = avg_pool_reflect(a.mul(b)?, k)?.sub(mu_ab)?;
    let num = mu_ab.scale(2.0).add_scalar(cfg.ssim_c1).mul(cov.scale(2.0).add_scalar(cfg.ssim_c2))?;
    let den = mu_aa.add(mu_bb)?.add_scalar(cfg.ssim_c1).mul(var_a.add(var_b)?.add_scalar(cfg.ssim_c2))?;
    num.div(den)
}

/// `(α/2)(1 − SSIM) + (1 − α)|a − b|`, averaged over channels: (N, 1, H, W).
pub fn photometric_error<'t>(target: Var<'t>, warped: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    let s = ssim(target, warped, cfg)?;
    let dssim = s.neg().add_scalar(1.0).scale(cfg.alpha / 2.0);
    let l1 = target.sub(warped)?.abs().scale(1.0 - cfg.alpha);
    Ok(channel_mean(dssim.add(l1)?))
}

/// Pixelwise minimum over per-source error maps.
pub fn min_reprojection<'t>(errors: &[Var<'t>]) -> Result<Var<'t>> {
    if errors.is_empty() {
        return contract_err("min_reprojection", "no source error maps");
    }
    minimum_of(errors)
}

/// Mask excluding pixels whose unwarped (identity) error already beats the
/// warped minimum; such pixels move with the camera or carry no signal.
pub fn automask(warped_min: &Tensor, identity_errors: &[Tensor]) -> Result<Tensor> {
    let Some((first, rest)) = identity_errors.split_first() else {
        return contract_err("automask", "no identity error maps");
    };
    let mut id_min = first.clone();
    for e in rest {
        id_min = id_min.zip_map(e, f64::min)?;
    }
    warped_min.zip_map(&id_min, |w, i| if i < w { 0.0 } else { 1.0 })
}

/// Mean over the pixels where `mask` is 1; zero when the mask is empty.
pub fn masked_mean<'t>(x: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let count = mask.sum();
    let total = x.mul_const(mask)?.sum();
    Ok(if count > 0.0 { total.scale(1.0 / count) } else { total.scale(0.0) })
}

/// Edge-aware smoothness of mean-normalized disparity against an image at
/// the same resolution.
pub fn smoothness<'t>(disp: Var<'t>, image: &Tensor) -> Result<Var<'t>> {
    let ds = disp.shape();
    let is = image.shape();
    if ds.c != 1 || ds.n != is.n || ds.h != is.h || ds.w != is.w {
        return shape_err("smoothness", format!("disparity {ds:?} with image {is:?}"));
    }
    let norm = mul_channels(disp, global_avg_pool(disp).recip())?;
    let tape = disp.tape();
    let img = tape.constant(image.clone());
    let wx = channel_mean(diff_x(img)?.abs()).neg().exp().value();
    let wy = channel_mean(diff_y(img)?.abs()).neg().exp().value();
    let sx = diff_x(norm)?.abs().mul_const(&wx)?.mean();
    let sy = diff_y(norm)?.abs().mul_const(&wy)?.mean();
    sx.add(sy)
}

/// One target frame with its sources, each paired with the transform that
/// maps target-frame points into that source's frame.
#[derive(Clone, Debug)]
pub struct ViewBatch<'t> {
    pub target: Var<'t>,
    pub sources: Vec<Var<'t>>,
    /// (N, 1, 4, 4) per source.
    pub transforms: Vec<Var<'t>>,
    pub intrinsics: CameraIntrinsics,
    pub range: DepthRange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reprojection: Vec<f64>,
    pub smoothness: Vec<f64>,
    pub lambda_smooth: f64,
}

impl LossBreakdown {
    pub fn mean_reprojection(&self) -> f64 {
        self.reprojection.iter().sum::<f64>() / self.reprojection.len() as f64
    }

    /// `L_final=.. L_re.0=.. L_smooth.0=..`; smoothness is measured on
    /// mean-normalized disparity.
    pub fn fields(&self) -> String {
        let mut s = format!("L_final={:e}", self.total);
        for (i, v) in self.reprojection.iter().enumerate() {
            s.push_str(&format!(" L_re.{i}={v:e}"));
        }
        for (i, v) in self.smoothness.iter().enumerate() {
            s.push_str(&format!(" L_smooth.{i}={v:e}"));
        }
        s.push_str(" smooth_disp=mean_normalized");
        s
    }
}

/// Multi-scale objective: each disparity is upsampled to the target
/// resolution, converted to depth and used to warp every source; the
/// smoothness term is evaluated at the disparity's own resolution.
/// Returns `(1/s) Σ (L_re + λ L_smooth)` and its breakdown.
pub fn total_loss<'t>(disps: &[Var<'t>], batch: &ViewBatch<'t>, cfg: &LossConfig) -> Result<(Var<'t>, LossBreakdown)> {
    cfg.validate()?;
    if disps.len() != cfg.num_scales {
        return contract_err("total_loss", format!("{} disparity maps for {} scales", disps.len(), cfg.num_scales));
    }
    if batch.sources.is_empty() || batch.sources.len() != batch.transforms.len() {
        return contract_err(
            "total_loss",
            format!("{} sources with {} transforms", batch.sources.len(), batch.transforms.len()),
        );
    }
    let ts = batch.target.shape();
    let target_value = batch.target.value();
    let identity_errors = if cfg.automask {
        batch
            .sources
            .iter()
            .map(|&s| Ok(photometric_error(batch.target, s, cfg)?.value()))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut total: Option<Var<'t>> = None;
    let mut breakdown = LossBreakdown {
        total: 0.0,
        reprojection: Vec::with_capacity(disps.len()),
        smoothness: Vec::with_capacity(disps.len()),
        lambda_smooth: cfg.lambda_smooth,
    };
    for &disp in disps {
        let s = disp.shape();
        let full = if (s.h, s.w) == (ts.h, ts.w) { disp } else { bilinear_resize(disp, ts.h, ts.w)? };
        let depth = disp_to_depth(full, batch.range);
        let mut errors = Vec::with_capacity(batch.sources.len());
        for (&src, &t) in batch.sources.iter().zip(&batch.transforms) {
            let (grid, _) = warp_grid(depth, &batch.intrinsics, t)?;
            let warped = synthesize_view(src, grid)?;
            errors.push(photometric_error(batch.target, warped, cfg)?);
        }
        let per_pixel = min_reprojection(&errors)?;
        let l_re = if cfg.automask {
            let mask = automask(&per_pixel.value(), &identity_errors)?;
            masked_mean(per_pixel, &mask)?
        } else {
            per_pixel.mean()
        };
        let image = if (s.h, s.w) == (ts.h, ts.w) { target_value.clone() } else { resize_tensor(&target_value, s.h, s.w)? };
        let l_smooth = smoothness(disp, &image)?;
        breakdown.reprojection.push(l_re.value().item());
        breakdown.smoothness.push(l_smooth.value().item());
        let term = l_re.add(l_smooth.scale(cfg.lambda_smooth))?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    let loss = total.expect("at least one scale").scale(1.0 / disps.len() as f64);
    breakdown.total = loss.value().item();
    Ok((loss, breakdown))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistillNorm {
    #[default]
    L1,
    L2,
}

impl fmt::Display for DistillNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillNorm::L1 => "l1",
            DistillNorm::L2 => "l2",
        })
    }
}

impl FromStr for DistillNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(DistillNorm::L1),
            "l2" | "L2" => Ok(DistillNorm::L2),
            _ => Err(Error::Parse(format!("unknown distillation norm {s:?} (l1, l2)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillConfig {
    pub teacher: Option<PathBuf>,
    pub norm: DistillNorm,
    /// Per-scale weights; empty means uniform.
    pub scale_weights: Vec<f64>,
}

impl DistillConfig {
    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        if let Some(t) = &self.teacher {
            kv.insert(format!("{prefix}teacher"), t.display());
        }
        kv.insert(format!("{prefix}norm"), self.norm);
        if !self.scale_weights.is_empty() {
            kv.insert(format!("{prefix}scale_weights"), join_list(&self.scale_weights));
        }
        kv
    }

    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        Ok(DistillConfig {
            teacher: kv.get(&format!("{prefix}teacher")).map(PathBuf::from),
            norm: kv.parsed(&format!("{prefix}norm"))?.unwrap_or_default(),
            scale_weights: match kv.get(&format!("{prefix}scale_weights")) {
                Some(v) => parse_list(v)?,
                None => Vec::new(),
            },
        })
    }
}

/// Weighted mean over scales of the per-pixel L1 (or squared) gap between
/// teacher and student disparities. Teacher maps are resized to each
/// student scale and enter the tape as constants.
pub fn distill_loss<'t>(teacher: &[Tensor], student: &[Var<'t>], cfg: &DistillConfig) -> Result<Var<'t>> {
    if teacher.len() != student.len() || student.is_empty() {
        return contract_err("distill_loss", format!("{} teacher scales vs {} student scales", teacher.len(), student.len()));
    }
    let weights = if cfg.scale_weights.is_empty() {
        vec![1.0; student.len()]
    } else if cfg.scale_weights.len() == student.len() {
        cfg.scale_weights.clone()
    } else {
        return contract_err("distill_loss", format!("{} weights for {} scales", cfg.scale_weights.len(), student.len()));
    };
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|&w| w < 0.0) {
        return contract_err("distill_loss", "scale weights must be non-negative with a positive sum");
    }
    let mut total: Option<Var<'t>> = None;
    for ((t, &s), &w) in teacher.iter().zip(student).zip(&weights) {
        let ss = s.shape();
        let ts = t.shape();
        let t = if (ts.h, ts.w) == (ss.h, ss.w) { t.clone() } else { resize_tensor(t, ss.h, ss.w)? };
        if t.shape() != ss {
            return contract_err("distill_loss", format!("teacher {ts:?} cannot match student {ss:?}"));
        }
        let diff = s.sub(s.tape().constant(t))?;
        let term = match cfg.norm {
            DistillNorm::L1 => diff.abs().mean(),
            DistillNorm::L2 => diff.square().mean(),
        }
        .scale(w / wsum);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    Ok(total.expect("non-empty"))
}
