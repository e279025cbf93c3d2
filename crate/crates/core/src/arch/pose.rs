//! Relative-pose network: a residual encoder over a stacked image pair and a
//! convolutional head averaged to one 6-vector per sample.

use crate::autograd::Var;
use crate::error::{contract_err, Result};
use crate::kv::{join_list, parse_list, KvMap};
use crate::ops::concat_channels;
use crate::tensor::{Shape, Tensor};

use super::encoder::ResidualEncoder;
use super::layers::{Conv, ConvSpec};
use super::params::{Ctx, ParamStore};

/// Output scaling of the pose head, a small-motion prior.
pub const POSE_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoseConfig {
    pub encoder_channels: Vec<usize>,
    pub head_channels: usize,
}

impl PoseConfig {
    pub fn resnet18() -> Self {
        PoseConfig {
            encoder_channels: vec![64, 64, 128, 256, 512],
            head_channels: 256,
        }
    }

    pub fn tiny() -> Self {
        PoseConfig {
            encoder_channels: vec![8, 8, 16, 32, 32],
            head_channels: 16,
        }
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert(format!("{prefix}encoder_channels"), join_list(&self.encoder_channels));
        kv.insert(format!("{prefix}head_channels"), self.head_channels);
        kv
    }

    pub fn from_kv(kv: &KvMap, prefix: &str) -> Result<Self> {
        Ok(PoseConfig {
            encoder_channels: parse_list(&kv.require::<String>(&format!("{prefix}encoder_channels"))?)?,
            head_channels: kv.require(&format!("{prefix}head_channels"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PoseNet {
    pub config: PoseConfig,
    encoder: ResidualEncoder,
    squeeze: Conv,
    pose0: Conv,
    pose1: Conv,
    pub out: Conv,
}

impl PoseNet {
    pub fn build(config: &PoseConfig) -> Result<(PoseNet, ParamStore)> {
        if config.encoder_channels.len() < 2 || config.encoder_channels.contains(&0) || config.head_channels == 0 {
            return Err(crate::error::Error::Build {
                node: "pose".into(),
                detail: format!("invalid pose config {config:?}"),
            });
        }
        let mut store = ParamStore::new();
        let encoder = ResidualEncoder::new(&mut store, "pose_encoder", "pose_e", 6, &config.encoder_channels);
        store.set_node("pose_head");
        let top = *config.encoder_channels.last().expect("non-empty");
        let h = config.head_channels;
        let net = PoseNet {
            config: config.clone(),
            encoder,
            squeeze: Conv::new(&mut store, "pose_head.squeeze", top, h, ConvSpec::new(1)),
            pose0: Conv::new(&mut store, "pose_head.pose0", h, h, ConvSpec::new(3)),
            pose1: Conv::new(&mut store, "pose_head.pose1", h, h, ConvSpec::new(3)),
            out: Conv::new(&mut store, "pose_head.out", h, 6, ConvSpec::new(1)),
        };
        Ok((net, store))
    }

    pub fn new(config: &PoseConfig, seed: u64) -> Result<(PoseNet, ParamStore)> {
        let (net, mut store) = Self::build(config)?;
        store.init(seed);
        Ok((net, store))
    }

    /// Pose of `source` relative to `target` as (N, 6, 1, 1): translation
    /// (tx, ty, tz) then Euler angles (rx, ry, rz).
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, target: Var<'t>, source: Var<'t>) -> Result<Var<'t>> {
        let pair = concat_channels(&[target, source])?;
        self.forward_pair(ctx, pair)
    }

    pub fn forward_pair<'t>(&self, ctx: &Ctx<'t, '_>, pair: Var<'t>) -> Result<Var<'t>> {
        if pair.shape().c != 6 {
            return contract_err("forward_pose", format!("image pair has {} channels, expected 6", pair.shape().c));
        }
        let feats = self.encoder.forward(ctx, pair)?;
        let top = *feats.last().expect("encoder levels");
        let x = self.squeeze.forward(ctx, top)?.relu();
        let x = self.pose0.forward(ctx, x)?.relu();
        let x = self.pose1.forward(ctx, x)?.relu();
        let x = self.out.forward(ctx, x)?;
        Ok(crate::ops::global_avg_pool(x).scale(POSE_SCALE))
    }

    pub fn predict(&self, store: &ParamStore, target: &Tensor, source: &Tensor) -> Result<Tensor> {
        let tape = crate::autograd::Tape::no_grad();
        let ctx = Ctx::new(&tape, store, false, false);
        Ok(self
            .forward(&ctx, tape.constant(target.clone()), tape.constant(source.clone()))?
            .value())
    }
}

/// Checks a pose tensor's shape.
pub fn check_pose_shape(s: Shape) -> bool {
    s.c == 6 && s.h == 1 && s.w == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images(h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::rand_uniform(Shape::new(2, 3, h, w), 0.0, 1.0, &mut rng),
            Tensor::rand_uniform(Shape::new(2, 3, h, w), 0.0, 1.0, &mut rng),
        )
    }

    #[test]
    fn zero_head_gives_identity_motion() {
        let (net, mut store) = PoseNet::new(&PoseConfig::tiny(), 1).unwrap();
        for id in [net.out.weight, net.out.bias.unwrap()] {
            let s = store.value(id).shape();
            store.set_value(id.0, Tensor::zeros(s)).unwrap();
        }
        let (a, b) = images(32, 64, 3);
        let p = net.predict(&store, &a, &b).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_is_resolution_independent() {
        let (net, store) = PoseNet::new(&PoseConfig::tiny(), 1).unwrap();
        for (h, w) in [(32, 32), (64, 96)] {
            let (a, b) = images(h, w, 4);
            assert_eq!(net.predict(&store, &a, &b).unwrap().shape(), Shape::new(2, 6, 1, 1));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (a, b) = images(32, 64, 5);
        let (n1, s1) = PoseNet::new(&PoseConfig::tiny(), 9).unwrap();
        let (n2, s2) = PoseNet::new(&PoseConfig::tiny(), 9).unwrap();
        assert!(n1.predict(&s1, &a, &b).unwrap().bit_eq(&n2.predict(&s2, &a, &b).unwrap()));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let (net, store) = PoseNet::new(&PoseConfig::tiny(), 1).unwrap();
        let tape = crate::autograd::Tape::no_grad();
        let ctx = Ctx::new(&tape, &store, false, false);
        let x = tape.constant(Tensor::zeros(Shape::new(1, 3, 32, 32)));
        assert!(net.forward_pair(&ctx, x).is_err());
    }
}
