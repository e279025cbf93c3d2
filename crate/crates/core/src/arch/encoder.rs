//! Feature encoders producing levels x^e_1..x^e_L at strides 2..2^L.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{max_pool2d, mul_channels, global_avg_pool};

use super::config::{MOBILE_BLOCKS, MOBILE_LEVEL_ENDS};
use super::layers::{BatchNorm, Conv, ConvSpec, Fc};
use super::params::{Ctx, ParamStore};

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(store: &mut ParamStore, name: &str, bn_name: &str, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        ConvBn {
            conv: Conv::new(store, name, cin, cout, spec.no_bias()),
            bn: BatchNorm::new(store, bn_name, cout),
        }
    }

    fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        self.bn.forward(ctx, self.conv.forward(ctx, x)?)
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
    down: Option<ConvBn>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let down = (stride != 1 || cin != cout).then(|| {
            ConvBn::new(
                store,
                &format!("{name}.downsample.conv"),
                &format!("{name}.downsample.bn"),
                cin,
                cout,
                ConvSpec::new(1).stride(stride),
            )
        });
        BasicBlock {
            a: ConvBn::new(store, &format!("{name}.conv1"), &format!("{name}.bn1"), cin, cout, ConvSpec::new(3).stride(stride)),
            b: ConvBn::new(store, &format!("{name}.conv2"), &format!("{name}.bn2"), cout, cout, ConvSpec::new(3)),
            down,
        }
    }

    fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.a.forward(ctx, x)?.relu();
        let y = self.b.forward(ctx, y)?;
        let skip = match &self.down {
            Some(d) => d.forward(ctx, x)?,
            None => x,
        };
        Ok(y.add(skip)?.relu())
    }
}

/// ResNet-18 layout: a 7×7 stride-2 stem, then one stage of two basic blocks
/// per further level (the first behind a 3×3 max pool).
#[derive(Clone, Debug)]
pub struct ResidualEncoder {
    stem: ConvBn,
    stages: Vec<[BasicBlock; 2]>,
    pub channels: Vec<usize>,
}

impl ResidualEncoder {
    /// `node` names the graph node owning each level, e.g. `x_e` for depth.
    pub fn new(store: &mut ParamStore, prefix: &str, node: &str, in_channels: usize, channels: &[usize]) -> Self {
        store.set_node(format!("{node}1"));
        let stem = ConvBn::new(
            store,
            &format!("{prefix}.conv1"),
            &format!("{prefix}.bn1"),
            in_channels,
            channels[0],
            ConvSpec::new(7).stride(2),
        );
        let mut stages = Vec::new();
        for (l, w) in channels.windows(2).enumerate() {
            store.set_node(format!("{node}{}", l + 2));
            let name = format!("{prefix}.layer{}", l + 1);
            let stride = if l == 0 { 1 } else { 2 };
            stages.push([
                BasicBlock::new(store, &format!("{name}.0"), w[0], w[1], stride),
                BasicBlock::new(store, &format!("{name}.1"), w[1], w[1], 1),
            ]);
        }
        ResidualEncoder {
            stem,
            stages,
            channels: channels.to_vec(),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut feats = vec![self.stem.forward(ctx, x)?.relu()];
        for (l, stage) in self.stages.iter().enumerate() {
            let mut y = *feats.last().expect("stem output");
            if l == 0 {
                y = max_pool2d(y, 3, 2, 1)?;
            }
            for block in stage {
                y = block.forward(ctx, y)?;
            }
            feats.push(y);
        }
        Ok(feats)
    }
}

/// Squeeze width of the inverted-residual SE gate: expansion/4 rounded to a multiple of 8.
pub fn squeeze_width(expansion: usize) -> usize {
    let v = expansion / 4;
    let mut nv = 8.max((v + 4) / 8 * 8);
    if (nv as f64) < 0.9 * v as f64 {
        nv += 8;
    }
    nv
}

#[derive(Clone, Debug)]
struct SqueezeExcite {
    reduce: Fc,
    expand: Fc,
}

#[derive(Clone, Debug)]
struct InvertedResidual {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: Option<SqueezeExcite>,
    project: ConvBn,
    residual: bool,
}

impl InvertedResidual {
    fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let mut y = x;
        if let Some(e) = &self.expand {
            y = e.forward(ctx, y)?.relu();
        }
        y = self.depthwise.forward(ctx, y)?.relu();
        if let Some(se) = &self.se {
            let s = se.reduce.forward(ctx, global_avg_pool(y))?.relu();
            let g = se.expand.forward(ctx, s)?.sigmoid();
            y = mul_channels(y, g)?;
        }
        y = self.project.forward(ctx, y)?;
        if self.residual {
            y = y.add(x)?;
        }
        Ok(y)
    }
}

/// Inverted-residual encoder with depthwise convolutions and SE gates.
#[derive(Clone, Debug)]
pub struct MobileEncoder {
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
}

impl MobileEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, node: &str, in_channels: usize) -> Result<Self> {
        store.set_node(format!("{node}1"));
        let stem = ConvBn::new(
            store,
            &format!("{prefix}.stem.conv"),
            &format!("{prefix}.stem.bn"),
            in_channels,
            MOBILE_BLOCKS[0].0,
            ConvSpec::new(3).stride(2),
        );
        let mut blocks = Vec::new();
        let mut level = 0;
        for (b, &(cin, k, exp, cout, se, stride)) in MOBILE_BLOCKS.iter().enumerate() {
            store.set_node(format!("{node}{}", level + 1));
            let name = format!("{prefix}.block{b}");
            let expand = (exp != cin).then(|| {
                ConvBn::new(store, &format!("{name}.expand"), &format!("{name}.expand_bn"), cin, exp, ConvSpec::new(1))
            });
            let depthwise = ConvBn::new(
                store,
                &format!("{name}.depthwise"),
                &format!("{name}.depthwise_bn"),
                exp,
                exp,
                ConvSpec::new(k).stride(stride).depthwise(exp),
            );
            let se = se.then(|| {
                let sq = squeeze_width(exp);
                SqueezeExcite {
                    reduce: Fc::new(store, &format!("{name}.se.reduce"), exp, sq, true),
                    expand: Fc::new(store, &format!("{name}.se.expand"), sq, exp, true),
                }
            });
            let project = ConvBn::new(store, &format!("{name}.project"), &format!("{name}.project_bn"), exp, cout, ConvSpec::new(1));
            blocks.push(InvertedResidual {
                expand,
                depthwise,
                se,
                project,
                residual: stride == 1 && cin == cout,
            });
            if MOBILE_LEVEL_ENDS.get(level) == Some(&b) {
                level += 1;
            }
        }
        if level != MOBILE_LEVEL_ENDS.len() {
            return Err(Error::Build {
                node: node.into(),
                detail: "block table does not cover every level".into(),
            });
        }
        Ok(MobileEncoder { stem, blocks })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut y = self.stem.forward(ctx, x)?.relu();
        let mut feats = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            y = block.forward(ctx, y)?;
            if MOBILE_LEVEL_ENDS.contains(&b) {
                feats.push(y);
            }
        }
        Ok(feats)
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Residual(ResidualEncoder),
    Mobile(MobileEncoder),
}

impl Encoder {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        match self {
            Encoder::Residual(e) => e.forward(ctx, x),
            Encoder::Mobile(e) => e.forward(ctx, x),
        }
    }
}
