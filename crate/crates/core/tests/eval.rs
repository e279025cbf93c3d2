mod common;

use hrdepth::eval::*;
use hrdepth::kv::KvMap;
use hrdepth::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random prediction and ground truth with some invalid and beyond-cap pixels.
fn pair(seed: u64, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(1, 1, h, w);
    let gt = Tensor::from_fn(s, |_, _, _, _| match r.random_range(0..10) {
        0 => 0.0,
        1 => r.random_range(80.0..120.0),
        _ => r.random_range(0.5..80.0),
    });
    let pred = Tensor::from_fn(s, |_, _, _, _| r.random_range(1e-4..100.0));
    (pred, gt)
}

fn close(a: [f64; 7], b: [f64; 7]) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(f64::MIN_POSITIVE))
}

#[test]
fn metrics_match_loop_oracle_on_random_pairs() {
    for seed in 0..50 {
        let (pred, gt) = pair(seed, 64, 64);
        for median_scale in [false, true] {
            let opts = MetricOptions { median_scale, ..MetricOptions::default() };
            let got = depth_metrics(&pred, &gt, &opts).unwrap().to_array();
            let want = common::metrics(&pred, &gt, median_scale, opts.cap);
            assert!(close(got, want), "seed {seed}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn median_scaling_undoes_power_of_two_scales_exactly() {
    let (pred, gt) = pair(99, 32, 48);
    let opts = MetricOptions::default();
    let base = depth_metrics(&pred, &gt, &opts).unwrap();
    for e in [-6, -1, 1, 3, 10] {
        let k = 2f64.powi(e);
        assert_eq!(depth_metrics(&pred.map(|v| v * k), &gt, &opts).unwrap(), base);
    }
}

#[test]
fn step_scene_bands_grow_with_gradient() {
    let gt = step_depth(320, 96, 5.0, 50.0);
    for ds in [2, 4, 8] {
        let r = interp_gap_analysis(&gt, &gt, ds).unwrap();
        assert!(r.up_is_monotone(), "{}", r.to_text());
        assert!(r.top().up > 5.0 * r.bottom().up);
        assert!(r.top().up > r.top().hr);
    }
}

#[test]
fn nearest_lookup_of_a_step_is_exact_off_the_edge() {
    // With the edge on a block boundary, nearest lookup loses nothing while
    // bilinear upsampling still smears across it.
    let gt = step_depth(64, 16, 5.0, 50.0);
    let r = interp_gap_analysis(&gt, &gt, 4).unwrap();
    assert_eq!(r.top().lr, 0.0);
    assert!(r.top().up > 0.0);
}

#[test]
fn report_round_trips_through_text() {
    let (pred, gt) = pair(7, 16, 16);
    let r = Report {
        rows: vec![
            MetricsRow { method: "hr".into(), width: 16, height: 16, metrics: depth_metrics(&pred, &gt, &MetricOptions::default()).unwrap() },
            MetricsRow { method: "raw".into(), width: 16, height: 16, metrics: depth_metrics(&pred, &gt, &MetricOptions { median_scale: false, ..Default::default() }).unwrap() },
        ],
    };
    let back = Report::from_kv(&KvMap::parse(&r.to_kv().emit()).unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(parse_resolution("640x192").unwrap(), (640, 192));
    assert!(parse_resolution("640*192").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn median_scaling_is_scale_invariant(seed in 0u64..1000, k in 1e-3..1e3f64) {
        let (pred, gt) = pair(seed, 12, 20);
        let opts = MetricOptions::default();
        let a = depth_metrics(&pred, &gt, &opts).unwrap().to_array();
        let b = depth_metrics(&pred.map(|v| v * k), &gt, &opts).unwrap().to_array();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
