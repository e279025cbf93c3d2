use hrdepth::arch::{ArchConfig, Checkpoint, DepthNet, FusionKind};
use hrdepth::data::{gen_synthetic_sequence, Sample, SceneSpec};
use hrdepth::train::*;
use hrdepth::Error;

const W: usize = 64;
const H: usize = 32;

fn samples(frames: usize) -> Vec<Sample> {
    gen_synthetic_sequence(&SceneSpec::two_plane(W, H, frames), 0).unwrap()
}

fn toy(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        decay_epoch: epochs.saturating_sub(1),
        seed,
        ..TrainConfig::toy(W, H)
    }
}

fn changed_fraction(a: &[(String, hrdepth::Tensor)], b: &[(String, hrdepth::Tensor)], params: usize) -> f64 {
    let mut changed = 0;
    let mut total = 0;
    for ((_, x), (_, y)) in a.iter().zip(b).take(params) {
        for (p, q) in x.data().iter().zip(y.data()) {
            total += 1;
            if p != q {
                changed += 1;
            }
        }
    }
    changed as f64 / total as f64
}

#[test]
fn zero_learning_rate_freezes_parameters_and_loss() {
    let data = samples(3);
    let cfg = TrainConfig { lr: 0.0, ..toy(4, 1) };
    let mut t = SelfSupTrainer::new(&cfg).unwrap();
    let before = (t.depth_store.clone(), t.pose_store.clone());
    fit(&mut t, &data[..1], None).unwrap();
    let l = &t.progress.losses;
    assert_eq!(l.len(), 4);
    assert!(l.iter().all(|v| v.to_bits() == l[0].to_bits()), "{l:?}");
    let named = |s: &hrdepth::arch::ParamStore| s.named_tensors();
    assert_eq!(changed_fraction(&named(&before.0), &named(&t.depth_store), t.depth_store.len()), 0.0);
    assert_eq!(changed_fraction(&named(&before.1), &named(&t.pose_store), t.pose_store.len()), 0.0);
}

#[test]
fn one_step_moves_nearly_every_parameter() {
    // The deepest level needs at least two rows, or 3x3 taps only ever see padding.
    let data = gen_synthetic_sequence(&SceneSpec::two_plane(128, 64, 10), 0).unwrap();
    let cfg = TrainConfig { max_steps: 1, batch_size: 4, epochs: 2, decay_epoch: 1, seed: 2, ..TrainConfig::toy(128, 64) };
    let mut t = SelfSupTrainer::new(&cfg).unwrap();
    let before = (t.depth_store.named_tensors(), t.pose_store.named_tensors());
    fit(&mut t, &data, None).unwrap();
    assert_eq!(t.progress.step, 1);
    let (dn, pn) = (t.depth_store.len(), t.pose_store.len());
    let depth = changed_fraction(&before.0, &t.depth_store.named_tensors(), dn);
    let pose = changed_fraction(&before.1, &t.pose_store.named_tensors(), pn);
    let size = |v: &[(String, hrdepth::Tensor)], n: usize| v.iter().take(n).map(|(_, t)| t.numel()).sum::<usize>() as f64;
    let (ds, ps) = (size(&before.0, dn), size(&before.1, pn));
    let overall = (depth * ds + pose * ps) / (ds + ps);
    assert!(overall >= 0.99, "depth {depth} pose {pose} overall {overall}");
}

#[test]
fn runs_are_bitwise_reproducible() {
    let data = samples(4);
    let cfg = toy(2, 3);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train_selfsup(&cfg, &data, Some(d.path())).unwrap();
    }
    for name in ["loss_log.txt", "epoch_000.ckpt", "epoch_001.ckpt", "last.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn resumed_run_continues_the_log() {
    let data = samples(4);
    let cfg = toy(3, 4);
    let full = train_selfsup(&cfg, &data, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = train_selfsup(&TrainConfig { epochs: 3, max_steps: 2, ..cfg.clone() }, &data, Some(dir.path())).unwrap();
    assert_eq!(first.progress.epoch, 1);
    let ck = Checkpoint::load(&dir.path().join("epoch_000.ckpt")).unwrap();
    let mut resumed = SelfSupTrainer::from_checkpoint(&ck).unwrap();
    resumed.config.max_steps = 0;
    fit(&mut resumed, &data, None).unwrap();
    let tail = &full.progress.losses[2..];
    assert_eq!(resumed.progress.losses.len(), tail.len());
    for (a, b) in tail.iter().zip(&resumed.progress.losses) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    assert_eq!(&full.progress.log[2..], &resumed.progress.log[..]);
    assert!(full.depth_store.bit_eq(&resumed.depth_store));
}

#[test]
fn learning_rate_decays_at_the_configured_epoch() {
    let data = samples(3);
    let cfg = TrainConfig { decay_epoch: 2, ..toy(3, 5) };
    let t = train_selfsup(&cfg, &data[..1], None).unwrap();
    let lrs: Vec<f64> = t
        .progress
        .log
        .iter()
        .map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("lr=")).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lrs, vec![1e-3, 1e-3, 1e-4]);
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let data = samples(3);
    let cfg = TrainConfig { lr: 1e200, ..toy(5, 6) };
    let dir = tempfile::tempdir().unwrap();
    let err = train_selfsup(&cfg, &data[..1], Some(dir.path())).err().expect("training should diverge");
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(dir.path().join("last_good.ckpt").exists());
}

fn teacher() -> (DepthNet, hrdepth::arch::ParamStore) {
    DepthNet::new(&ArchConfig::tiny_res18(FusionKind::Fse), 7).unwrap()
}

#[test]
fn distillation_leaves_teacher_untouched() {
    let data = samples(4);
    let (net, store) = teacher();
    let frozen = store.clone();
    let cfg = TrainConfig { arch: ArchConfig::hr_depth_lite(), mode: TrainMode::Distill, ..toy(2, 8) };
    let t = train_distill(&cfg, net, store, &data, None).unwrap();
    assert!(t.teacher_store.bit_eq(&frozen));
    assert!(t.progress.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn self_distillation_starts_far_closer_than_a_stranger() {
    let data = samples(3);
    let arch = ArchConfig::tiny_res18(FusionKind::Fse);
    // Running statistics settle on the training image without any weight change.
    let settle = TrainConfig { lr: 0.0, epochs: 60, decay_epoch: 59, arch: arch.clone(), seed: 9, ..toy(60, 9) };
    let mut warm = SelfSupTrainer::new(&settle).unwrap();
    fit(&mut warm, &data[..1], None).unwrap();
    let first_loss = |seed: u64| {
        let cfg = TrainConfig { arch: arch.clone(), mode: TrainMode::Distill, max_steps: 1, ..toy(2, seed) };
        let t = train_distill(&cfg, warm.depth.clone(), warm.depth_store.clone(), &data[..1], None).unwrap();
        t.progress.losses[0]
    };
    let same = first_loss(9);
    let other = first_loss(10);
    assert!(same < 0.1 * other, "self {same} vs stranger {other}");
}

#[test]
fn scale_mismatch_is_rejected() {
    let (net, store) = teacher();
    let cfg = TrainConfig {
        arch: ArchConfig::hr_depth_lite().with_scales(2),
        loss: hrdepth::losses::LossConfig { num_scales: 2, ..Default::default() },
        ..toy(2, 0)
    };
    assert!(DistillTrainer::new(&cfg, net, store).is_err());
}
