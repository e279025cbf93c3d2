//! Parameterized layers. Each layer registers its tensors at construction and
//! looks them up through a [`Ctx`] during the forward pass.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{
    self, batch_norm_eval, batch_norm_train, concat_channels, conv2d, fully_connected,
    global_avg_pool, mul_channels, Conv2dOpts, PadMode,
};
use crate::tensor::{Shape, Tensor};

use super::params::{BnUpdate, BufferId, Ctx, Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOpts,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

/// Shape options of a convolution beyond its channel counts.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub k: usize,
    pub stride: usize,
    pub bias: bool,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(k: usize) -> Self {
        ConvSpec {
            k,
            stride: 1,
            bias: true,
            pad_mode: PadMode::Zero,
            groups: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn reflect(mut self) -> Self {
        self.pad_mode = PadMode::Reflect;
        self
    }

    pub fn depthwise(mut self, channels: usize) -> Self {
        self.groups = channels;
        self
    }
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        let fan_in = cin / spec.groups * spec.k * spec.k;
        let weight = store.register(
            format!("{name}.weight"),
            Shape::new(cout, cin / spec.groups, spec.k, spec.k),
            Init::FanIn(fan_in),
        );
        let bias = spec
            .bias
            .then(|| store.register(format!("{name}.bias"), Shape::new(1, cout, 1, 1), Init::FanIn(fan_in)));
        Conv {
            weight,
            bias,
            opts: Conv2dOpts {
                stride: spec.stride,
                padding: spec.k / 2,
                pad_mode: spec.pad_mode,
                groups: spec.groups,
            },
            cin,
            cout,
            k: spec.k,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        conv2d(x, ctx.param(self.weight), self.bias.map(|b| ctx.param(b)), self.opts)
    }

    /// C_in·C_out·k²/groups + C_out when biased.
    pub fn param_count(&self) -> usize {
        self.cin / self.opts.groups * self.cout * self.k * self.k + if self.bias.is_some() { self.cout } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        let s = Shape::new(1, c, 1, 1);
        BatchNorm {
            gamma: store.register(format!("{name}.gamma"), s, Init::Const(1.0)),
            beta: store.register(format!("{name}.beta"), s, Init::Const(0.0)),
            running_mean: store.register_buffer(format!("{name}.running_mean"), Tensor::zeros(s)),
            running_var: store.register_buffer(format!("{name}.running_var"), Tensor::ones(s)),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        if ctx.train() {
            let (y, stats) = batch_norm_train(x, g, b)?;
            ctx.push_bn_update(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                stats,
            });
            Ok(y)
        } else {
            batch_norm_eval(x, g, b, ctx.buffer(self.running_mean), ctx.buffer(self.running_var))
        }
    }
}

/// Dense layer on (N, C, 1, 1) features.
#[derive(Clone, Debug)]
pub struct Fc {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Fc {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Fc {
            weight: store.register(format!("{name}.weight"), Shape::new(cout, cin, 1, 1), Init::FanIn(cin)),
            bias: bias.then(|| store.register(format!("{name}.bias"), Shape::new(1, cout, 1, 1), Init::FanIn(cin))),
            cin,
            cout,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        fully_connected(x, ctx.param(self.weight), self.bias.map(|b| ctx.param(b)))
    }
}

/// Squeeze-and-excitation gate: pool, FC down by `r`, rectifier, FC back up,
/// sigmoid, channel reweighting. Both FC layers are bias-free.
#[derive(Clone, Debug)]
pub struct SeGate {
    pub fc1: Fc,
    pub fc2: Fc,
}

impl SeGate {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, r: usize) -> Result<Self> {
        if r == 0 || c % r != 0 {
            return Err(Error::Build {
                node: name.to_string(),
                detail: format!("reduction ratio {r} does not divide {c} channels"),
            });
        }
        Ok(SeGate {
            fc1: Fc::new(store, &format!("{name}.fc1"), c, c / r, false),
            fc2: Fc::new(store, &format!("{name}.fc2"), c / r, c, false),
        })
    }

    pub fn gate<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let s = self.fc1.forward(ctx, global_avg_pool(x))?.relu();
        Ok(self.fc2.forward(ctx, s)?.sigmoid())
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let g = self.gate(ctx, x)?;
        mul_channels(x, g)
    }
}

/// Geometry of one fusion block: total concatenated input channels, output
/// channels, reduction ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FuseBlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub r: usize,
}

impl FuseBlockSpec {
    /// C_in·C_out·9 + C_out.
    pub fn conv3x3_params(&self) -> usize {
        self.c_in * self.c_out * 9 + self.c_out
    }

    /// (2/r)·C_in² + (C_in + 1)·C_out.
    pub fn fse_params(&self) -> usize {
        2 * self.c_in * self.c_in / self.r + (self.c_in + 1) * self.c_out
    }

    /// Squeeze-excitation gate followed by a 3×3 convolution.
    pub fn se_conv_params(&self) -> usize {
        2 * self.c_in * self.c_in / self.r + self.conv3x3_params()
    }
}

/// Feature-fusion squeeze-excitation: concat, channel gate, 1×1 fusion conv.
#[derive(Clone, Debug)]
pub struct Fse {
    pub se: SeGate,
    pub fuse: Conv,
    pub spec: FuseBlockSpec,
}

impl Fse {
    pub fn new(store: &mut ParamStore, name: &str, spec: FuseBlockSpec) -> Result<Self> {
        Ok(Fse {
            se: SeGate::new(store, name, spec.c_in, spec.r)?,
            fuse: Conv::new(store, &format!("{name}.conv1x1"), spec.c_in, spec.c_out, ConvSpec::new(1)),
            spec,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, features: &[Var<'t>]) -> Result<Var<'t>> {
        let x = concat_channels(features)?;
        if x.shape().c != self.spec.c_in {
            return Err(Error::Shape {
                op: "fse_fuse",
                detail: format!("concat has {} channels, block expects {}", x.shape().c, self.spec.c_in),
            });
        }
        let x = self.se.forward(ctx, x)?;
        self.fuse.forward(ctx, x)
    }
}

/// The fusion step of a decoder node.
#[derive(Clone, Debug)]
pub enum Fusion {
    Conv3x3(Conv),
    Fse(Fse),
    SeConv(SeGate, Conv),
}

impl Fusion {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, features: &[Var<'t>]) -> Result<Var<'t>> {
        match self {
            Fusion::Conv3x3(c) => c.forward(ctx, concat_channels(features)?),
            Fusion::Fse(f) => f.forward(ctx, features),
            Fusion::SeConv(se, c) => {
                let x = se.forward(ctx, concat_channels(features)?)?;
                c.forward(ctx, x)
            }
        }
    }
}

/// 3×3 reflect-padded convolution, ELU, then ×2 bilinear upsampling.
#[derive(Clone, Debug)]
pub struct UpBlock {
    pub conv: Conv,
}

impl UpBlock {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        UpBlock {
            conv: Conv::new(store, name, cin, cout, ConvSpec::new(3).reflect()),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        ops::upsample2(self.conv.forward(ctx, x)?.elu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fse_closed_form_examples() {
        let spec = FuseBlockSpec { c_in: 64, c_out: 32, r: 4 };
        assert_eq!(spec.fse_params(), 4128);
        assert_eq!(spec.conv3x3_params(), 18464);
        let mut store = ParamStore::new();
        Fse::new(&mut store, "f", spec).unwrap();
        assert_eq!(store.count(), 4128);
        let mut store = ParamStore::new();
        Conv::new(&mut store, "c", 64, 32, ConvSpec::new(3));
        assert_eq!(store.count(), 18464);
    }

    #[test]
    fn fse_rejects_indivisible_width() {
        let mut store = ParamStore::new();
        assert!(Fse::new(&mut store, "f", FuseBlockSpec { c_in: 30, c_out: 8, r: 4 }).is_err());
    }

    #[test]
    fn saturated_gate_reduces_to_pointwise_conv() {
        // Large positive FC weights on positive features drive the sigmoid to exactly 1.
        let spec = FuseBlockSpec { c_in: 8, c_out: 3, r: 4 };
        let mut store = ParamStore::new();
        let block = Fse::new(&mut store, "f", spec).unwrap();
        store.init(4);
        for id in [block.se.fc1.weight, block.se.fc2.weight] {
            let shape = store.value(id).shape();
            store.set_value(id.0, Tensor::full(shape, 1e3)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::rand_uniform(Shape::new(2, 5, 4, 4), 0.1, 1.0, &mut rng);
        let b = Tensor::rand_uniform(Shape::new(2, 3, 4, 4), 0.1, 1.0, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, true, false);
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let gated = block.forward(&ctx, &[va, vb]).unwrap().value();
        let plain = block.fuse.forward(&ctx, concat_channels(&[va, vb]).unwrap()).unwrap().value();
        assert!(gated.bit_eq(&plain));
    }
}
