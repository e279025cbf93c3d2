mod common;

use hrdepth::geometry::*;
use hrdepth::losses::*;
use hrdepth::{Shape, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, r)
}

struct Scene {
    disps: Vec<Tensor>,
    target: Tensor,
    sources: Vec<Tensor>,
    poses: Vec<Mat4>,
    k: CameraIntrinsics,
}

fn scene(seed: u64, scales: usize) -> Scene {
    let (w, h) = (20, 12);
    let mut r = rng(seed);
    let disps = (0..scales)
        .map(|i| Tensor::rand_uniform(Shape::new(1, 1, h >> i, w >> i), 0.02, 0.5, &mut r))
        .collect();
    Scene {
        disps,
        target: image(h, w, &mut r),
        sources: vec![image(h, w, &mut r), image(h, w, &mut r)],
        poses: vec![
            PoseVec { t: [0.1, 0.02, -0.05], euler: [0.01, -0.02, 0.015] }.matrix(true),
            PoseVec { t: [-0.08, 0.01, 0.04], euler: [-0.01, 0.02, 0.0] }.matrix(false),
        ],
        k: CameraIntrinsics::kitti_like(w, h),
    }
}

fn library_loss(s: &Scene, cfg: &LossConfig) -> (f64, LossBreakdown) {
    let tape = Tape::no_grad();
    let view = ViewBatch {
        target: tape.constant(s.target.clone()),
        sources: s.sources.iter().map(|t| tape.constant(t.clone())).collect(),
        transforms: s.poses.iter().map(|m| tape.constant(matrices_tensor(&[*m]))).collect(),
        intrinsics: s.k,
        range: DepthRange::default(),
    };
    let disps: Vec<_> = s.disps.iter().map(|d| tape.constant(d.clone())).collect();
    let (loss, b) = total_loss(&disps, &view, cfg).unwrap();
    (loss.value().item(), b)
}

#[test]
fn two_scale_objective_matches_loop_oracle() {
    let cfg = LossConfig { num_scales: 2, ..LossConfig::default() };
    for seed in 0..4 {
        let s = scene(seed, 2);
        let (got, b) = library_loss(&s, &cfg);
        let want = common::total_loss(&s.disps, &s.target, &s.sources, &s.poses, &s.k, DepthRange::default(), &cfg);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        let composed = (0..2).map(|i| b.reprojection[i] + cfg.lambda_smooth * b.smoothness[i]).sum::<f64>() / 2.0;
        assert!((got - composed).abs() <= 1e-12);
    }
}

#[test]
fn photometric_error_of_identical_images_is_zero() {
    let img = image(9, 11, &mut rng(3));
    let tape = Tape::no_grad();
    let v = tape.constant(img);
    let e = photometric_error(v, v, &LossConfig::default()).unwrap().value();
    assert_eq!(e.max(), 0.0);
    assert_eq!(e.min(), 0.0);
}

#[test]
fn photometric_error_matches_oracle() {
    let mut r = rng(4);
    let (a, b) = (image(7, 9, &mut r), image(7, 9, &mut r));
    let cfg = LossConfig::default();
    let tape = Tape::no_grad();
    let e = photometric_error(tape.constant(a.clone()), tape.constant(b.clone()), &cfg).unwrap().value();
    let want = common::photometric(&a, &b, &cfg);
    for (x, y) in e.data().iter().zip(&want) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn smoothness_matches_oracle_and_vanishes_on_constants() {
    let mut r = rng(5);
    let img = image(8, 10, &mut r);
    let d = Tensor::rand_uniform(Shape::new(1, 1, 8, 10), 0.1, 1.0, &mut r);
    let tape = Tape::no_grad();
    let got = smoothness(tape.constant(d.clone()), &img).unwrap().value().item();
    assert!((got - common::smoothness(&d, &img)).abs() <= 1e-12);
    let flat = smoothness(tape.constant(Tensor::full(d.shape(), 0.3)), &img).unwrap().value().item();
    assert_eq!(flat, 0.0);
}

#[test]
fn minimum_never_exceeds_any_source() {
    let cfg = LossConfig::default();
    let s = scene(6, 1);
    let tape = Tape::no_grad();
    let target = tape.constant(s.target.clone());
    let errs: Vec<_> = s
        .sources
        .iter()
        .map(|src| photometric_error(target, tape.constant(src.clone()), &cfg).unwrap())
        .collect();
    let m = min_reprojection(&errs).unwrap().value().mean();
    for e in &errs {
        assert!(m <= e.value().mean());
    }
}

#[test]
fn lambda_scales_only_the_smoothness_contribution() {
    let s = scene(7, 2);
    let base = LossConfig { num_scales: 2, ..LossConfig::default() };
    let (a, ba) = library_loss(&s, &base);
    let (b, bb) = library_loss(&s, &LossConfig { lambda_smooth: 3.0 * base.lambda_smooth, ..base.clone() });
    assert_eq!(ba.reprojection, bb.reprojection);
    assert_eq!(ba.smoothness, bb.smoothness);
    let smooth: f64 = ba.smoothness.iter().sum::<f64>() / 2.0;
    assert!((b - a - 2.0 * base.lambda_smooth * smooth).abs() <= 1e-14);
    let (c, bc) = library_loss(&s, &LossConfig { lambda_smooth: 0.0, ..base });
    assert!((c - bc.mean_reprojection()).abs() <= 1e-15);
}

#[test]
fn objective_vanishes_for_static_frames_and_flat_disparity() {
    let mut r = rng(8);
    let target = image(12, 20, &mut r);
    let s = Scene {
        disps: vec![Tensor::full(Shape::new(1, 1, 12, 20), 0.4), Tensor::full(Shape::new(1, 1, 6, 10), 0.4)],
        sources: vec![target.clone(), target.clone()],
        target,
        poses: vec![IDENTITY4, IDENTITY4],
        k: CameraIntrinsics::kitti_like(20, 12),
    };
    let (loss, _) = library_loss(&s, &LossConfig { num_scales: 2, ..LossConfig::default() });
    assert_eq!(loss, 0.0);
}

#[test]
fn scale_count_must_match() {
    let s = scene(9, 2);
    let tape = Tape::no_grad();
    let view = ViewBatch {
        target: tape.constant(s.target.clone()),
        sources: vec![tape.constant(s.sources[0].clone())],
        transforms: vec![tape.constant(matrices_tensor(&[IDENTITY4]))],
        intrinsics: s.k,
        range: DepthRange::default(),
    };
    let disps: Vec<_> = s.disps.iter().map(|d| tape.constant(d.clone())).collect();
    assert!(total_loss(&disps, &view, &LossConfig::default()).is_err());
}

#[test]
fn distillation_constant_offset_is_its_magnitude() {
    let tape = Tape::no_grad();
    let t = Tensor::rand_uniform(Shape::new(1, 1, 8, 8), 0.2, 0.8, &mut rng(10));
    let s = tape.constant(t.map(|v| v - 0.07));
    let l1 = distill_loss(&[t.clone()], &[s], &DistillConfig::default()).unwrap().value().item();
    assert!((l1 - 0.07).abs() < 1e-12);
    let same = distill_loss(&[t.clone()], &[tape.constant(t.clone())], &DistillConfig::default()).unwrap();
    assert_eq!(same.value().item(), 0.0);
    let mismatch = distill_loss(&[t.clone(), t], &[s], &DistillConfig::default());
    assert!(mismatch.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_is_non_negative(seed in 0u64..10_000, automask in any::<bool>()) {
        let s = scene(seed, 2);
        let (loss, b) = library_loss(&s, &LossConfig { num_scales: 2, automask, ..LossConfig::default() });
        prop_assert!(loss >= 0.0);
        prop_assert!(b.reprojection.iter().chain(&b.smoothness).all(|&v| v >= 0.0));
    }
}
