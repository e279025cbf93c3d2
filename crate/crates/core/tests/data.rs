use std::collections::HashSet;

use hrdepth::data::*;
use hrdepth::geometry::{matrices_tensor, DepthRange};
use hrdepth::losses::{total_loss, LossConfig, ViewBatch};
use hrdepth::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn batcher_floor_divides_and_covers_disjointly() {
    let b = Batcher::new(25, 12, 3).unwrap();
    assert_eq!(b.batches_per_epoch(), 2);
    let epoch = b.epoch(0);
    assert_eq!(epoch.len(), 2);
    let seen: HashSet<usize> = epoch.iter().flatten().copied().collect();
    assert_eq!(seen.len(), 24);
    assert_eq!(b.epoch(0), Batcher::new(25, 12, 3).unwrap().epoch(0));
    assert_ne!(b.epoch(0), b.epoch(1));
}

fn loss_of(sample: &Sample, disp: &Tensor, range: DepthRange) -> f64 {
    let tape = Tape::no_grad();
    let view = ViewBatch {
        target: tape.constant(sample.target.clone()),
        sources: sample.sources.iter().map(|s| tape.constant(s.image.clone())).collect(),
        transforms: sample
            .sources
            .iter()
            .map(|s| tape.constant(matrices_tensor(&[s.transform.expect("synthetic pose")])))
            .collect(),
        intrinsics: sample.intrinsics,
        range,
    };
    let cfg = LossConfig { num_scales: 1, ..LossConfig::default() };
    total_loss(&[tape.constant(disp.clone())], &view, &cfg).unwrap().0.value().item()
}

#[test]
fn true_geometry_beats_perturbed_disparity() {
    let spec = SceneSpec::two_plane(160, 48, 5);
    let samples = gen_synthetic_sequence(&spec, 0).unwrap();
    let sample = &samples[1];
    let range = spec.range;
    let gt = sample.depth.as_ref().unwrap();
    let truth = gt.map(|d| range.disparity(d));
    let base = loss_of(sample, &truth, range);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let trials = 60;
    let mut wins = 0;
    for t in 0..trials {
        let amp = r.random_range(0.05..0.4);
        let perturbed = match t % 3 {
            // Global rescale.
            0 => {
                let k = if r.random_bool(0.5) { 1.0 + amp } else { 1.0 / (1.0 + amp) };
                truth.map(|v| (v * k).min(0.999))
            }
            // Independent per-pixel noise.
            1 => {
                let noise = Tensor::rand_uniform(truth.shape(), 1.0 - amp, 1.0 + amp, &mut r);
                truth.zip_map(&noise, |v, n| (v * n).min(0.999)).unwrap()
            }
            // Smooth low-frequency warp of the field.
            _ => {
                let (fx, fy, ph) = (r.random_range(0.02..0.2), r.random_range(0.02..0.3), r.random_range(0.0..6.3));
                let field = Tensor::from_fn(truth.shape(), |_, _, y, x| 1.0 + amp * (fx * x as f64 + fy * y as f64 + ph).sin());
                truth.zip_map(&field, |v, f| (v * f).min(0.999)).unwrap()
            }
        };
        if base < loss_of(sample, &perturbed, range) {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.95 * trials as f64, "{wins}/{trials}");
}

#[test]
fn synthetic_sequences_are_seeded() {
    let spec = SceneSpec::two_plane(64, 32, 4);
    let a = gen_synthetic_sequence(&spec, 5).unwrap();
    let b = gen_synthetic_sequence(&spec, 5).unwrap();
    let c = gen_synthetic_sequence(&spec, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].target, c[0].target);
    assert_eq!(a.len(), 2);
    for s in &a {
        assert_eq!(s.sources.len(), 2);
        assert!(s.target.min() >= 0.0 && s.target.max() <= 1.0);
        let d = s.depth.as_ref().unwrap();
        assert!(d.min() >= spec.range.min_depth && d.max() <= spec.range.max_depth);
    }
}

#[test]
fn kitti_layout_reads_are_pure() {
    let dir = tempfile::tempdir().unwrap();
    let drive = "2011_09_26/2011_09_26_drive_0001_sync";
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for cam in ["image_02", "image_03"] {
        let d = dir.path().join(drive).join(cam).join("data");
        std::fs::create_dir_all(&d).unwrap();
        for f in 0..4 {
            let img = Tensor::rand_uniform(Shape::new(1, 3, 24, 40), 0.0, 1.0, &mut r).map(|v| (v * 255.0).round() / 255.0);
            write_rgb(&d.join(format!("{f:010}.png")), &img).unwrap();
        }
    }
    let split = dir.path().join("train.txt");
    std::fs::write(&split, format!("{drive} 0 l\n{drive} 1 l\n{drive} 2 r\n{drive} 3 l\n")).unwrap();
    let entries = load_split(&split).unwrap();
    let cfg = KittiConfig { stereo: true, ..KittiConfig::new(dir.path(), 32, 16) };
    let a = load_kitti(&cfg, &entries).unwrap();
    let b = load_kitti(&cfg, &entries).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    let s = &a[1];
    assert_eq!(s.target.shape(), Shape::new(1, 3, 16, 32));
    assert_eq!(s.sources.len(), 3);
    assert_eq!(s.sources[2].kind, SourceKind::Stereo);
    assert_eq!(s.sources[2].transform.unwrap()[0][3], 0.54);
    assert!((s.intrinsics.fx - 0.58 * 32.0).abs() < 1e-12);
}
