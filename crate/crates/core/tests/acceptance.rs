//! End-to-end acceptance checks. Runs as a plain binary so the one-line
//! verdicts are always printed; pass criterion numbers to run a subset.

mod common;

use std::time::Instant;

use hrdepth::arch::layers::{Conv, ConvSpec, Fse};
use hrdepth::arch::*;
use hrdepth::data::{gen_synthetic_sequence, SceneSpec};
use hrdepth::eval::{depth_metrics, interp_gap_analysis, step_depth, MetricOptions};
use hrdepth::geometry::*;
use hrdepth::losses::*;
use hrdepth::train::*;
use hrdepth::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn numel(store: &ParamStore) -> usize {
    store.entries().iter().map(|e| e.value.numel()).sum()
}

fn fusion_exactness() -> Check {
    let t0 = Instant::now();
    let mut r = rng(1);
    for _ in 0..10 {
        let c_in = 4 * r.random_range(1..=128);
        let c_out = r.random_range(1..=256);
        let spec = FuseBlockSpec { c_in, c_out, r: 4 };
        let mut store = ParamStore::new();
        Fse::new(&mut store, "f", spec).map_err(|e| e.to_string())?;
        let fse = numel(&store);
        let mut store = ParamStore::new();
        Conv::new(&mut store, "c", c_in, c_out, ConvSpec::new(3).reflect());
        let conv = numel(&store);
        let want_fse = 2 * c_in * (c_in / 4) + (c_in + 1) * c_out;
        let want_conv = c_in * c_out * 9 + c_out;
        if fse != want_fse || conv != want_conv {
            return Err(format!("({c_in}, {c_out}): fSE {fse} vs {want_fse}, conv {conv} vs {want_conv}"));
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    ensure(dt < 1.0, format!("10 random pairs integer-exact in {dt:.3}s"))
}

fn parameter_budgets() -> Check {
    let t0 = Instant::now();
    let count = |cfg: ArchConfig| -> Result<AuditTable, String> {
        let (net, store) = DepthNet::build(&cfg).map_err(|e| e.to_string())?;
        Ok(count_params(&net, &store))
    };
    let fse = count(ArchConfig::hr_depth_res18(FusionKind::Fse))?;
    let conv = count(ArchConfig::hr_depth_res18(FusionKind::Conv3x3))?;
    let base = count(ArchConfig::baseline_unet())?;
    let lite = count(ArchConfig::hr_depth_lite())?;
    let lite_enc = lite.subtotal(NodeKind::Encoder);
    let within = |got: usize, want: f64, tol: f64| ((got as f64 - want) / want).abs() <= tol;
    let checks = [
        within(fse.total, 14.62e6, 0.05),
        within(conv.total, 16.06e6, 0.05),
        within(base.total, 14.84e6, 0.05),
        within(lite.total, 3.1e6, 0.10),
        within(lite_enc, 2.82e6, 0.10),
        conv.total > base.total && base.total > fse.total && fse.total > lite.total,
    ];
    let dt = t0.elapsed().as_secs_f64();
    ensure(
        checks.iter().all(|&c| c) && dt < 5.0,
        format!(
            "fse {} conv {} baseline {} lite {} (encoder {}) in {dt:.2}s",
            fse.total, conv.total, base.total, lite.total, lite_enc
        ),
    )
}

fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let results = hrdepth::gradsuite::run_suite(10, None).map_err(|e| e.to_string())?;
    let dt = t0.elapsed().as_secs_f64();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passes()).map(|r| r.name).collect();
    for r in results.iter().filter(|r| !r.passes()) {
        eprintln!("  {}", r.line());
    }
    ensure(
        failed.is_empty() && dt < 120.0,
        format!("{} cases x 10 seeds, failing {failed:?}, {dt:.1}s", results.len()),
    )
}

fn loss_identities() -> Check {
    let cfg = LossConfig { num_scales: 2, ..LossConfig::default() };
    let (w, h) = (20, 12);
    let mut r = rng(4);
    let mut image = || Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut r);
    let (target, sources) = (image(), vec![image(), image()]);
    let mut r = rng(5);
    let disps: Vec<Tensor> = (0..2)
        .map(|i| Tensor::rand_uniform(Shape::new(1, 1, h >> i, w >> i), 0.02, 0.5, &mut r))
        .collect();
    let poses = [
        PoseVec { t: [0.1, 0.02, -0.05], euler: [0.01, -0.02, 0.015] }.matrix(true),
        PoseVec { t: [-0.08, 0.01, 0.04], euler: [-0.01, 0.02, 0.0] }.matrix(false),
    ];
    let k = CameraIntrinsics::kitti_like(w, h);
    let range = DepthRange::default();
    let tape = Tape::no_grad();
    let err = |e: hrdepth::Error| e.to_string();

    let t = tape.constant(target.clone());
    let self_err = photometric_error(t, t, &cfg).map_err(err)?.value();
    let flat = smoothness(tape.constant(Tensor::full(disps[0].shape(), 0.3)), &target).map_err(err)?.value().item();

    let view = ViewBatch {
        target: t,
        sources: sources.iter().map(|s| tape.constant(s.clone())).collect(),
        transforms: poses.iter().map(|m| tape.constant(matrices_tensor(&[*m]))).collect(),
        intrinsics: k,
        range,
    };
    let dv: Vec<_> = disps.iter().map(|d| tape.constant(d.clone())).collect();
    let (loss, b) = total_loss(&dv, &view, &cfg).map_err(err)?;
    let got = loss.value().item();
    let oracle = common::total_loss(&disps, &target, &sources, &poses, &k, range, &cfg);
    let composed = (0..2).map(|i| b.reprojection[i] + cfg.lambda_smooth * b.smoothness[i]).sum::<f64>() / 2.0;

    let errs: Vec<_> = sources
        .iter()
        .map(|s| photometric_error(t, tape.constant(s.clone()), &cfg))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let min = min_reprojection(&errs).map_err(err)?.value().mean();
    let min_ok = errs.iter().all(|e| min <= e.value().mean());

    let oracle_gap = (got - oracle).abs() / oracle.abs().max(1.0);
    ensure(
        self_err.max() == 0.0 && self_err.min() == 0.0 && flat == 0.0 && oracle_gap <= 1e-12 && (got - composed).abs() <= 1e-12 && min_ok,
        format!("r(I,I)={} smooth(const)={flat} |L-oracle|={oracle_gap:.1e} |L-composed|={:.1e} min<=each {min_ok}", self_err.max(), (got - composed).abs()),
    )
}

fn geometry() -> Check {
    let err = |e: hrdepth::Error| e.to_string();
    let (w, h) = (20, 12);
    let k = CameraIntrinsics::kitti_like(w, h);
    let src = Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut rng(1));
    let tape = Tape::no_grad();
    let depth = tape.constant(Tensor::rand_uniform(Shape::new(1, 1, h, w), 0.1, 90.0, &mut rng(2)));
    let (grid, _) = warp_grid(depth, &k, tape.constant(matrices_tensor(&[IDENTITY4]))).map_err(err)?;
    let identity = synthesize_view(tape.constant(src.clone()), grid).map_err(err)?.value().bit_eq(&src);

    let mut r = rng(3);
    let mut round_trip: f64 = 0.0;
    for _ in 0..1000 {
        let k = CameraIntrinsics::centered(640, 192, r.random_range(5.0..2000.0), r.random_range(5.0..2000.0));
        let (x, y, d) = (r.random_range(0.0..640.0), r.random_range(0.0..192.0), r.random_range(0.1..100.0));
        let (u, v) = k.project(k.backproject(x, y, d));
        round_trip = round_trip.max((u - x).abs() / x.max(1.0)).max((v - y).abs() / y.max(1.0));
    }

    let (w, h) = (32, 12);
    let k = CameraIntrinsics::kitti_like(w, h);
    let mut shift: f64 = 0.0;
    for _ in 0..50 {
        let (tx, d) = (r.random_range(-0.5..0.5), r.random_range(1.0..50.0));
        let depth = tape.constant(Tensor::full(Shape::new(1, 1, h, w), d));
        let (grid, _) = warp_grid(depth, &k, tape.constant(matrices_tensor(&[stereo_transform(tx)]))).map_err(err)?;
        let g = grid.value();
        let want = k.fx * tx / d;
        for y in 0..h {
            for x in 0..w {
                let px = hrdepth::ops::denormalize_coord(g.at(0, 0, y, x), w);
                let py = hrdepth::ops::denormalize_coord(g.at(0, 1, y, x), h);
                shift = shift.max((px - x as f64 - want).abs()).max((py - y as f64).abs());
            }
        }
    }
    ensure(
        identity && round_trip <= 1e-12 && shift <= 1e-9,
        format!("identity bit-exact {identity}, round trip {round_trip:.1e}, shift error {shift:.1e}"),
    )
}

/// Fraction of pixels whose predicted disparity falls on the correct side of
/// the other plane's median disparity.
fn plane_ordering(disp: &Tensor, gt: &Tensor, split: f64) -> f64 {
    let median_where = |near: bool| {
        let mut v: Vec<f64> = disp.data().iter().zip(gt.data()).filter(|(_, &g)| (g < split) == near).map(|(&d, _)| d).collect();
        hrdepth::eval::median(&mut v)
    };
    let (near_med, far_med) = (median_where(true), median_where(false));
    let correct = disp
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(&d, &g)| if g < split { d > far_med } else { d < near_med })
        .count();
    correct as f64 / disp.numel() as f64
}

fn toy_training() -> Check {
    let t0 = Instant::now();
    let err = |e: hrdepth::Error| e.to_string();
    let samples = gen_synthetic_sequence(&SceneSpec::two_plane(320, 96, 22), 0).map_err(err)?;
    let cfg = TrainConfig { max_steps: 400, seed: 1, ..TrainConfig::toy(320, 96) };
    let t = train_selfsup(&cfg, &samples, None).map_err(err)?;
    let re = &t.progress.reprojection;
    let tail = &re[re.len() - 20..];
    let ratio = tail.iter().sum::<f64>() / tail.len() as f64 / re[0];
    let mut ordering = 0.0;
    for s in &samples {
        let disp = t.depth.predict(&t.depth_store, &s.target).map_err(err)?.swap_remove(0);
        ordering += plane_ordering(&disp, s.depth.as_ref().expect("synthetic depth"), 2.0);
    }
    ordering /= samples.len() as f64;
    let dt = t0.elapsed().as_secs_f64();
    ensure(
        ratio <= 0.5 && ordering >= 0.9 && dt <= 600.0,
        format!("{} steps: final L_re {:.1}% of step 1, planes ordered on {:.2}% of pixels, {dt:.0}s", re.len(), 100.0 * ratio, 100.0 * ordering),
    )
}

fn distillation() -> Check {
    let t0 = Instant::now();
    let err = |e: hrdepth::Error| e.to_string();
    let samples = gen_synthetic_sequence(&SceneSpec::two_plane(96, 32, 22), 0).map_err(err)?;
    let teacher = train_selfsup(&TrainConfig { max_steps: 150, seed: 1, ..TrainConfig::toy(96, 32) }, &samples, None).map_err(err)?;
    let frozen = teacher.depth_store.clone();
    let cfg = TrainConfig {
        max_steps: 200,
        seed: 2,
        batch_size: 2,
        arch: ArchConfig::hr_depth_lite(),
        mode: TrainMode::Distill,
        ..TrainConfig::toy(96, 32)
    };
    let d = train_distill(&cfg, teacher.depth.clone(), teacher.depth_store.clone(), &samples, None).map_err(err)?;
    let (mut lo, mut hi, mut gap, mut n) = (f64::MAX, f64::MIN, 0.0, 0.0);
    for s in &samples {
        let td = teacher.depth.predict(&teacher.depth_store, &s.target).map_err(err)?.swap_remove(0);
        let sd = d.student.predict(&d.student_store, &s.target).map_err(err)?.swap_remove(0);
        lo = lo.min(td.min());
        hi = hi.max(td.max());
        gap += td.data().iter().zip(sd.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += td.numel() as f64;
    }
    let frac = gap / n / (hi - lo);
    let unchanged = d.teacher_store.bit_eq(&frozen);
    let dt = t0.elapsed().as_secs_f64();
    ensure(
        frac <= 0.10 && unchanged && d.progress.step <= 500,
        format!("{} student steps: mean |dT-dS| {:.2}% of teacher range, teacher bit-unchanged {unchanged}, {dt:.0}s", d.progress.step, 100.0 * frac),
    )
}

fn interpolation_gap() -> Check {
    let t0 = Instant::now();
    let gt = step_depth(320, 96, 5.0, 50.0);
    // A full-resolution prediction with small independent errors.
    let noise = Tensor::rand_uniform(gt.shape(), 0.98, 1.02, &mut rng(8));
    let hr = gt.zip_map(&noise, |g, n| g * n).map_err(|e| e.to_string())?;
    let r = interp_gap_analysis(&hr, &gt, 4).map_err(|e| e.to_string())?;
    let (top, bottom) = (r.top(), r.bottom());
    let dt = t0.elapsed().as_secs_f64();
    ensure(
        top.up >= 5.0 * bottom.up && top.up > top.hr && dt < 30.0,
        format!("top/bottom up-sampled abs_rel {:.4}/{:.4} = {:.1}x, HR top {:.4}, {dt:.2}s", top.up, bottom.up, top.up / bottom.up, top.hr),
    )
}

fn metric_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(seed);
        let s = Shape::new(1, 1, 64, 64);
        let gt = Tensor::from_fn(s, |_, _, _, _| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.5..100.0) });
        let pred = Tensor::from_fn(s, |_, _, _, _| r.random_range(1e-4..100.0));
        for median_scale in [false, true] {
            let opts = MetricOptions { median_scale, ..MetricOptions::default() };
            let got = depth_metrics(&pred, &gt, &opts).map_err(|e| e.to_string())?.to_array();
            let want = common::metrics(&pred, &gt, median_scale, opts.cap);
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    let mut r = rng(77);
    let s = Shape::new(1, 1, 32, 32);
    let gt = Tensor::from_fn(s, |_, _, _, _| r.random_range(0.5..80.0));
    let pred = Tensor::from_fn(s, |_, _, _, _| r.random_range(0.5..80.0));
    let opts = MetricOptions::default();
    let base = depth_metrics(&pred, &gt, &opts).map_err(|e| e.to_string())?;
    let invariant = [-8, -3, -1, 1, 2, 5].iter().all(|&e| {
        let k = 2f64.powi(e);
        depth_metrics(&pred.map(|v| v * k), &gt, &opts).is_ok_and(|m| m == base)
    });
    ensure(
        worst <= 1e-12 && invariant,
        format!("50 pairs, worst relative gap {worst:.1e}; scaled predictions give identical metrics {invariant}"),
    )
}

fn determinism() -> Check {
    let err = |e: hrdepth::Error| e.to_string();
    let samples = gen_synthetic_sequence(&SceneSpec::two_plane(64, 32, 6), 0).map_err(err)?;
    let cfg = TrainConfig { epochs: 2, decay_epoch: 1, seed: 3, ..TrainConfig::toy(64, 32) };
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        train_selfsup(&cfg, &samples, Some(d.path())).map_err(err)?;
    }
    let mut files: Vec<String> = std::fs::read_dir(dirs[0].path())
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    files.sort();
    for f in &files {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
    }
    ensure(files.len() >= 3, format!("{} artifacts bitwise identical: {}", files.len(), files.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("fusion block parameter exactness", fusion_exactness),
        ("model parameter budgets", parameter_budgets),
        ("gradient suite", gradient_suite),
        ("loss identities", loss_identities),
        ("geometry", geometry),
        ("toy self-supervised training", toy_training),
        ("distillation", distillation),
        ("interpolation gap", interpolation_gap),
        ("metric oracle", metric_oracle),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().skip(1).any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion_{}_{}: test", i + 1, name.replace(' ', "_"));
        }
        return;
    }
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let (verdict, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {verdict} {name}: {detail}", i + 1);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
