use std::fs;
use std::path::{Path, PathBuf};

use hrdepth::arch::{count_params, ArchConfig, DepthNet, FusionKind, ParamStore};
use hrdepth::data::{gen_synthetic_sequence, load_kitti, load_split, read_gray16, read_rgb, write_gray16, write_gray8, KittiConfig, Sample, SceneSpec};
use hrdepth::eval::{depth_metrics, interp_gap_analysis, DepthMetrics, MetricOptions, MetricsRow, Report};
use hrdepth::geometry::{disp_to_depth_tensor, DepthRange};
use hrdepth::kv::KvMap;
use hrdepth::ops::resize_tensor;
use hrdepth::train::{load_depth_checkpoint, train_distill, train_selfsup, TrainConfig, TrainMode};
use hrdepth::Tensor;

use crate::run::{self, runtime, usage, Failure};
use crate::{Common, DataArgs};

const TOY_SIZE: (usize, usize) = (320, 96);
const DEFAULT_FRAMES: usize = 22;

/// Loads the training samples and records how to regenerate them.
fn load_samples(kv: &KvMap, data: &DataArgs, cfg: &TrainConfig, manifest: &mut KvMap) -> Result<Vec<Sample>, Failure> {
    let dkv = run::sub_kv(kv, "data.");
    let root = data.kitti_root.clone().or_else(|| dkv.get("kitti_root").map(PathBuf::from));
    if let Some(root) = root {
        let split = data
            .split
            .clone()
            .or_else(|| dkv.get("split").map(PathBuf::from))
            .ok_or_else(|| usage("KITTI data needs --split"))?;
        let stereo = data.stereo || dkv.parsed::<bool>("stereo").map_err(usage)?.unwrap_or(false);
        let kc = KittiConfig { stereo, ..KittiConfig::new(&root, cfg.width, cfg.height) };
        let entries = load_split(&split).map_err(runtime)?;
        manifest.insert("data.kitti_root", root.display());
        manifest.insert("data.split", split.display());
        manifest.insert("data.stereo", stereo);
        return load_kitti(&kc, &entries).map_err(runtime);
    }
    let scene_kv = run::sub_kv(kv, "scene.");
    let scene = if !scene_kv.is_empty() {
        SceneSpec::from_kv(&scene_kv).map_err(usage)?
    } else if let Some(p) = &data.scene {
        SceneSpec::from_kv(&KvMap::load(p).map_err(usage)?).map_err(usage)?
    } else {
        let frames = match data.frames {
            Some(f) => f,
            None => dkv.parsed("frames").map_err(usage)?.unwrap_or(DEFAULT_FRAMES),
        };
        SceneSpec::two_plane(cfg.width, cfg.height, frames)
    };
    if (scene.width, scene.height) != (cfg.width, cfg.height) {
        return Err(usage(format!(
            "scene is {}x{} but training runs at {}x{}",
            scene.width, scene.height, cfg.width, cfg.height
        )));
    }
    let scene_seed: u64 = dkv.parsed("scene_seed").map_err(usage)?.unwrap_or(cfg.seed);
    manifest.insert("data.scene_seed", scene_seed);
    for (k, v) in scene.to_kv().iter() {
        manifest.insert(format!("scene.{k}"), v);
    }
    gen_synthetic_sequence(&scene, scene_seed).map_err(usage)
}

fn base_config(kv: &KvMap, data: &DataArgs, arch: Option<ArchConfig>) -> TrainConfig {
    let toy = data.toy || kv.get("preset") == Some("toy");
    let mut base = if toy { TrainConfig::toy(TOY_SIZE.0, TOY_SIZE.1) } else { TrainConfig::default() };
    if let Some(a) = arch {
        base.loss.num_scales = a.num_output_scales;
        base.arch = a;
    }
    base
}

fn summarize(losses: &[f64]) {
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("{} steps, loss {first:.6} -> {last:.6}", losses.len());
    }
}

pub fn train(common: &Common, data: &DataArgs) -> Result<(), Failure> {
    let kv = run::config_kv(common)?;
    let cfg = run::train_config(common, &kv, base_config(&kv, data, None))?;
    let mut manifest = run::manifest("train");
    let samples = load_samples(&kv, data, &cfg, &mut manifest)?;
    manifest.merge(&cfg.to_kv());
    if common.out.is_none() {
        log::warn!("no --out given; nothing will be saved");
    }
    run::with_output(common.out.as_deref(), manifest, |dir, _| {
        let t = train_selfsup(&cfg, &samples, dir).map_err(runtime)?;
        summarize(&t.progress.losses);
        Ok(())
    })
}

pub fn distill(common: &Common, data: &DataArgs, teacher: Option<PathBuf>) -> Result<(), Failure> {
    let kv = run::config_kv(common)?;
    let teacher = teacher
        .or_else(|| kv.get("teacher").map(PathBuf::from))
        .ok_or_else(|| usage("distill needs --teacher"))?;
    let (tnet, tstore, tmeta) = load_depth_checkpoint(&teacher).map_err(runtime)?;
    let mut base = base_config(&kv, data, Some(ArchConfig::hr_depth_lite().with_scales(tnet.config().num_output_scales)));
    base.mode = TrainMode::Distill;
    if let (Some(w), Some(h)) = (tmeta.parsed("width").map_err(runtime)?, tmeta.parsed("height").map_err(runtime)?) {
        (base.width, base.height) = (w, h);
    }
    let cfg = run::train_config(common, &kv, base)?;
    let mut manifest = run::manifest("distill");
    manifest.insert("teacher", teacher.display());
    let samples = load_samples(&kv, data, &cfg, &mut manifest)?;
    manifest.merge(&cfg.to_kv());
    run::with_output(common.out.as_deref(), manifest, |dir, _| {
        let t = train_distill(&cfg, tnet, tstore, &samples, dir).map_err(runtime)?;
        summarize(&t.progress.losses);
        Ok(())
    })
}

/// Network, weights, input size and depth range stored in a checkpoint.
struct Loaded {
    net: DepthNet,
    store: ParamStore,
    width: usize,
    height: usize,
    range: DepthRange,
}

fn load_network(common: &Common, path: &Path) -> Result<Loaded, Failure> {
    let (net, store, meta) = load_depth_checkpoint(path).map_err(runtime)?;
    let dims = match run::resolution(common)? {
        Some(d) => d,
        None => (
            meta.parsed("width").map_err(runtime)?.ok_or_else(|| usage("checkpoint has no width; pass --resolution"))?,
            meta.parsed("height").map_err(runtime)?.ok_or_else(|| usage("checkpoint has no height; pass --resolution"))?,
        ),
    };
    let d = DepthRange::default();
    let range = DepthRange::new(
        meta.parsed("min_depth").map_err(runtime)?.unwrap_or(d.min_depth),
        meta.parsed("max_depth").map_err(runtime)?.unwrap_or(d.max_depth),
    )
    .map_err(runtime)?;
    Ok(Loaded { net, store, width: dims.0, height: dims.1, range })
}

impl Loaded {
    /// Full-resolution depth for an image of any size, at the network's input size.
    fn depth(&self, image: &Tensor) -> Result<Tensor, Failure> {
        let s = image.shape();
        let input = if (s.h, s.w) == (self.height, self.width) {
            image.clone()
        } else {
            resize_tensor(image, self.height, self.width).map_err(runtime)?
        };
        let disp = self.net.predict(&self.store, &input).map_err(runtime)?.swap_remove(0);
        Ok(disp_to_depth_tensor(&disp, self.range))
    }

    fn manifest(&self, kv: &mut KvMap, checkpoint: &Path) {
        kv.insert("checkpoint", checkpoint.display());
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("min_depth", self.range.min_depth);
        kv.insert("max_depth", self.range.max_depth);
    }
}

pub fn infer(common: &Common, checkpoint: &Path, image: &Path, depth_scale: f64) -> Result<(), Failure> {
    if !(depth_scale > 0.0) {
        return Err(usage("--depth-scale must be positive"));
    }
    let net = load_network(common, checkpoint)?;
    let img = read_rgb(image).map_err(runtime)?;
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("{stem}_depth")));
    let mut manifest = run::manifest("infer");
    net.manifest(&mut manifest, checkpoint);
    manifest.insert("image", image.display());
    manifest.insert("depth_png", "depth.png");
    manifest.insert("depth_png_scale", depth_scale);
    manifest.insert("depth_raw", "depth.f64");
    manifest.insert("depth_raw_format", "little-endian f64, row-major, height x width");
    run::with_output(Some(&out), manifest, |dir, _| {
        let dir = dir.expect("staged output");
        let depth = net.depth(&img)?;
        write_gray16(&dir.join("depth.png"), &depth, depth_scale).map_err(runtime)?;
        let raw: Vec<u8> = depth.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("depth.f64"), raw).map_err(runtime)?;
        let r = net.range;
        let disp = depth.map(|d| (1.0 / d - 1.0 / r.max_depth) / (1.0 / r.min_depth - 1.0 / r.max_depth));
        write_gray8(&dir.join("disparity.png"), &disp).map_err(runtime)?;
        println!("depth {}x{}: min {:.3} m, max {:.3} m", net.width, net.height, depth.min(), depth.max());
        Ok(())
    })
}

pub fn audit(common: &Common) -> Result<(), Failure> {
    let cfg = run::arch(common, &ArchConfig::hr_depth_res18(FusionKind::Fse))?;
    let (net, store) = DepthNet::build(&cfg).map_err(usage)?;
    let table = count_params(&net, &store);
    let title = format!("{} with {} fusion", common.arch.as_deref().unwrap_or("hr-depth-res18"), cfg.fusion_kind);
    let text = table.to_text(&title);
    print!("{text}");
    let mut manifest = run::manifest("audit-params");
    manifest.merge(&cfg.to_kv("arch."));
    let out = common.out.as_deref();
    run::with_output(out, manifest, |dir, _| {
        if let Some(dir) = dir {
            fs::write(dir.join("audit.txt"), &text).map_err(runtime)?;
            fs::write(dir.join("audit.kv"), table.to_kv().emit()).map_err(runtime)?;
        }
        if table.fusion_exact() {
            Ok(())
        } else {
            Err(runtime("a fusion block's counted parameters differ from its closed form"))
        }
    })
}

pub fn analyze_interp(common: &Common, downscale: usize, checkpoint: Option<PathBuf>) -> Result<(), Failure> {
    let net = checkpoint.as_deref().map(|c| load_network(common, c)).transpose()?;
    let (w, h) = match (&net, run::resolution(common)?) {
        (_, Some(d)) => d,
        (Some(n), None) => (n.width, n.height),
        (None, None) => (640, 192),
    };
    let seed = common.seed.unwrap_or(0);
    let scene = gen_synthetic_sequence(&SceneSpec::step(w, h), seed).map_err(usage)?.swap_remove(0);
    let gt = scene.depth.expect("synthetic depth");
    let hr = match &net {
        None => gt.clone(),
        Some(n) => {
            let mut d = n.depth(&scene.target)?;
            if (d.shape().h, d.shape().w) != (h, w) {
                d = resize_tensor(&d, h, w).map_err(runtime)?;
            }
            let ratio = hrdepth::eval::median(&mut gt.data().to_vec()) / hrdepth::eval::median(&mut d.data().to_vec());
            d.map(|v| v * ratio)
        }
    };
    let report = interp_gap_analysis(&hr, &gt, downscale).map_err(usage)?;
    let text = report.to_text();
    print!("{text}");
    println!(
        "top/bottom band ratio {:.2}, monotone {}",
        report.top().up / report.bottom().up.max(f64::MIN_POSITIVE),
        report.up_is_monotone()
    );
    let mut manifest = run::manifest("analyze-interp");
    manifest.insert("width", w);
    manifest.insert("height", h);
    manifest.insert("downscale", downscale);
    manifest.insert("seed", seed);
    if let (Some(n), Some(c)) = (&net, &checkpoint) {
        n.manifest(&mut manifest, c);
    }
    run::with_output(common.out.as_deref(), manifest, |dir, _| {
        if let Some(dir) = dir {
            fs::write(dir.join("interp.txt"), &text).map_err(runtime)?;
            fs::write(dir.join("interp.kv"), report.to_kv().emit()).map_err(runtime)?;
        }
        Ok(())
    })
}

pub fn eval(
    common: &Common,
    checkpoint: &Path,
    images: &[PathBuf],
    gts: &[PathBuf],
    gt_scale: f64,
    frames: usize,
    opts: MetricOptions,
) -> Result<(), Failure> {
    if images.len() != gts.len() {
        return Err(usage(format!("{} images but {} ground-truth maps", images.len(), gts.len())));
    }
    let net = load_network(common, checkpoint)?;
    let seed = common.seed.unwrap_or(0);
    let mut manifest = run::manifest("eval");
    net.manifest(&mut manifest, checkpoint);
    manifest.insert("median_scale", opts.median_scale);
    manifest.insert("cap", opts.cap);
    manifest.insert("eigen_crop", opts.eigen_crop);
    let pairs: Vec<(Tensor, Tensor)> = if images.is_empty() {
        let scene = SceneSpec::two_plane(net.width, net.height, frames);
        manifest.insert("data", "synthetic two-plane");
        manifest.insert("frames", frames);
        manifest.insert("seed", seed);
        gen_synthetic_sequence(&scene, seed)
            .map_err(usage)?
            .into_iter()
            .map(|s| (s.target, s.depth.expect("synthetic depth")))
            .collect()
    } else {
        manifest.insert("gt_scale", gt_scale);
        for (i, (im, gt)) in images.iter().zip(gts).enumerate() {
            manifest.insert(format!("image.{i}"), im.display());
            manifest.insert(format!("gt.{i}"), gt.display());
        }
        images
            .iter()
            .zip(gts)
            .map(|(im, gt)| Ok((read_rgb(im)?, read_gray16(gt, gt_scale)?)))
            .collect::<hrdepth::Result<_>>()
            .map_err(runtime)?
    };
    let mut all = Vec::with_capacity(pairs.len());
    for (image, gt) in &pairs {
        let mut depth = net.depth(image)?;
        let g = gt.shape();
        if (depth.shape().h, depth.shape().w) != (g.h, g.w) {
            depth = resize_tensor(&depth, g.h, g.w).map_err(runtime)?;
        }
        all.push(depth_metrics(&depth, gt, &opts).map_err(runtime)?);
    }
    let method = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = Report {
        rows: vec![MetricsRow {
            method,
            width: net.width,
            height: net.height,
            metrics: DepthMetrics::mean(&all).map_err(runtime)?,
        }],
    };
    let text = report.to_text();
    print!("{text}");
    run::with_output(common.out.as_deref(), manifest, |dir, _| {
        if let Some(dir) = dir {
            fs::write(dir.join("metrics.txt"), &text).map_err(runtime)?;
            fs::write(dir.join("metrics.kv"), report.to_kv().emit()).map_err(runtime)?;
        }
        Ok(())
    })
}

pub fn gradcheck(common: &Common, all: bool, case: Option<String>, seeds: u64) -> Result<(), Failure> {
    if all == case.is_some() {
        return Err(usage("pass exactly one of --all or --case NAME"));
    }
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let results = hrdepth::gradsuite::run_suite(seeds, case.as_deref()).map_err(runtime)?;
    if results.is_empty() {
        return Err(usage(format!("no gradient case matches {:?}", case.unwrap_or_default())));
    }
    let lines: Vec<String> = results.iter().map(|r| r.line()).collect();
    for l in &lines {
        println!("{l}");
    }
    let failed = results.iter().filter(|r| !r.passes()).count();
    let mut manifest = run::manifest("gradcheck");
    manifest.insert("seeds", seeds);
    manifest.insert("filter", case.as_deref().unwrap_or("all"));
    run::with_output(common.out.as_deref(), manifest, |dir, _| {
        if let Some(dir) = dir {
            fs::write(dir.join("gradcheck.txt"), lines.join("\n") + "\n").map_err(runtime)?;
        }
        if failed == 0 {
            Ok(())
        } else {
            Err(runtime(format!("{failed} of {} cases exceed the tolerance", results.len())))
        }
    })
}
