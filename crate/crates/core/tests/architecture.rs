use hrdepth::arch::*;
use hrdepth::{Shape, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn map_sizes(maps: &[Tensor]) -> Vec<(usize, usize)> {
    maps.iter().map(|m| (m.shape().h, m.shape().w)).collect()
}

#[test]
fn full_network_at_192x640_emits_four_scales_in_unit_interval() {
    let (net, store) = DepthNet::new(&ArchConfig::hr_depth_res18(FusionKind::Fse), 0).unwrap();
    let maps = net.predict(&store, &random_image(192, 640, 1)).unwrap();
    assert_eq!(map_sizes(&maps), vec![(192, 640), (96, 320), (48, 160), (24, 80)]);
    for m in &maps {
        assert_eq!(m.shape().c, 1);
        assert!(m.min() > 0.0 && m.max() < 1.0);
    }
}

#[test]
fn high_resolution_input_keeps_the_same_ratios() {
    let (net, store) = DepthNet::new(&ArchConfig::tiny_res18(FusionKind::Fse), 0).unwrap();
    let maps = net.predict(&store, &random_image(320, 1024, 2)).unwrap();
    assert_eq!(map_sizes(&maps), vec![(320, 1024), (160, 512), (80, 256), (40, 128)]);
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let cfg = ArchConfig::tiny_res18(FusionKind::Fse);
    let img = random_image(64, 64, 3);
    let (a, sa) = DepthNet::new(&cfg, 11).unwrap();
    let (b, sb) = DepthNet::new(&cfg, 11).unwrap();
    let (pa, pb) = (a.predict(&sa, &img).unwrap(), b.predict(&sb, &img).unwrap());
    assert!(pa.iter().zip(&pb).all(|(x, y)| x.bit_eq(y)));
}

#[test]
fn misaligned_resolution_is_rejected() {
    let (net, store) = DepthNet::new(&ArchConfig::tiny_res18(FusionKind::Fse), 0).unwrap();
    assert!(net.predict(&store, &random_image(48, 64, 0)).is_err());
}

#[test]
fn every_parameter_receives_gradient() {
    for cfg in [ArchConfig::tiny_res18(FusionKind::Fse), ArchConfig::tiny_res18(FusionKind::Conv3x3)] {
        let (net, store) = DepthNet::new(&cfg, 5).unwrap();
        let mut alive = vec![false; store.len()];
        for trial in 0..5 {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store, true, true);
            let maps = net.forward(&ctx, tape.constant(random_image(64, 64, 100 + trial))).unwrap();
            let mut loss = maps[0].mean();
            for m in &maps[1..] {
                loss = loss.add(m.square().mean()).unwrap();
            }
            let g = tape.backward(loss, None).unwrap();
            for (k, grad) in ctx.grads(&g).iter().enumerate() {
                if grad.as_ref().is_some_and(|t| t.data().iter().any(|&v| v != 0.0)) {
                    alive[k] = true;
                }
            }
        }
        let dead: Vec<_> = store.entries().iter().zip(&alive).filter(|(_, a)| !**a).map(|(e, _)| &e.name).collect();
        assert!(dead.is_empty(), "{:?}: no gradient reached {dead:?}", cfg.fusion_kind);
    }
}

#[test]
fn decoder_inputs_match_concatenated_widths() {
    for cfg in [ArchConfig::hr_depth_res18(FusionKind::Fse), ArchConfig::hr_depth_lite(), ArchConfig::baseline_unet()] {
        let g = build_graph(&cfg).unwrap();
        assert!(g.is_topological());
        for n in &g.nodes {
            let sum: usize = n.inputs.iter().map(|e| e.channels).sum();
            if n.kind != NodeKind::Encoder {
                assert_eq!(n.in_channels, sum, "{}", n.name);
            }
        }
    }
}

#[test]
fn swapping_fse_for_conv3x3_always_costs_parameters() {
    for base in [ArchConfig::hr_depth_res18(FusionKind::Fse), ArchConfig::hr_depth_lite(), ArchConfig::tiny_res18(FusionKind::Fse)] {
        let (fse, fse_store) = DepthNet::build(&base).unwrap();
        let conv_cfg = ArchConfig { fusion_kind: FusionKind::Conv3x3, ..base.clone() };
        let (conv, conv_store) = DepthNet::build(&conv_cfg).unwrap();
        let a = count_params(&fse, &fse_store);
        let b = count_params(&conv, &conv_store);
        assert!(b.total > a.total);
        for f in &a.fusion {
            assert!(f.exact(), "{f:?}");
            if f.spec.c_in >= f.spec.c_out && f.spec.r >= 2 {
                assert!(f.spec.conv3x3_params() > f.spec.fse_params(), "{f:?}");
            }
        }
    }
}

#[test]
fn checkpoint_reloads_identical_predictions() {
    let cfg = ArchConfig::tiny_res18(FusionKind::Fse);
    let (net, store) = DepthNet::new(&cfg, 4).unwrap();
    let mut ck = Checkpoint::new(cfg.to_kv("arch."));
    ck.extend_prefixed("depth.", store.named_tensors());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let cfg2 = ArchConfig::from_kv(&loaded.meta, "arch.").unwrap();
    let (net2, mut store2) = DepthNet::build(&cfg2).unwrap();
    store2.load_named(&loaded.with_prefix("depth.")).unwrap();
    let img = random_image(32, 64, 9);
    let a = net.predict(&store, &img).unwrap();
    let b = net2.predict(&store2, &img).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
}
