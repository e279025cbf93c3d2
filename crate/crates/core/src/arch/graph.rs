//! The depth network as a node graph: encoder nodes `x_e{i}`, aggregation
//! nodes `x_{i}_{j}` on the dense skip pathways, decoder nodes `x_d{i}` and
//! disparity heads `disp{i}`.
//!
//! Row `i` (1 = highest resolution encoder level) carries aggregation nodes
//! `x_{i,1}..x_{i,L-1-i}`. Node `x_{i,j}` consumes `x_e{i}`, every earlier
//! node of its row and one upsampled deeper feature: `x_e{i+1}` for `j = 1`,
//! `x_{i+1,j-1}` otherwise. Decoder node `x_d{i}` fuses `x_e{i}`, the whole
//! aggregation row `i` and the upsampled `x_d{i+1}` (with `x_d{L}` being
//! `x_e{L}`); `x_d0` has no skip input.

use std::fmt;

use crate::autograd::Var;
use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

use super::config::{ArchConfig, EncoderKind, FusionKind};
use super::encoder::{Encoder, MobileEncoder, ResidualEncoder};
use super::layers::{Conv, ConvSpec, Fse, FuseBlockSpec, Fusion, SeGate, UpBlock};
use super::params::{Ctx, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Encoder,
    Aggregation,
    Decoder,
    DispHead,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Encoder => "encoder",
            NodeKind::Aggregation => "aggregation",
            NodeKind::Decoder => "decoder",
            NodeKind::DispHead => "disp_head",
        })
    }
}

/// One incoming connection of a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: String,
    /// Channels arriving over this edge, after any upsampling block.
    pub channels: usize,
    /// Whether the edge passes through a conv + ×2 upsampling block.
    pub upsampled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub name: String,
    pub kind: NodeKind,
    /// Level (row) index: encoder and decoder level, or aggregation row.
    pub level: usize,
    /// Column within an aggregation row; zero for other kinds.
    pub column: usize,
    pub inputs: Vec<Edge>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial downsampling factor relative to the input image.
    pub stride: usize,
    /// Present on fusing decoder nodes.
    pub fuse: Option<FuseBlockSpec>,
}

/// Connectivity of a depth network, in a topologically executable order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeGraph {
    pub config: ArchConfig,
    pub nodes: Vec<GraphNode>,
}

pub fn encoder_name(i: usize) -> String {
    format!("x_e{i}")
}

pub fn aggregation_name(i: usize, j: usize) -> String {
    format!("x_{i}_{j}")
}

pub fn decoder_name(i: usize) -> String {
    format!("x_d{i}")
}

pub fn head_name(i: usize) -> String {
    format!("disp{i}")
}

impl NodeGraph {
    pub fn node(&self, name: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Channel width of a node's output.
    fn width(&self, name: &str) -> usize {
        self.node(name).map_or(0, |n| n.out_channels)
    }

    /// True when every input refers to an earlier node.
    pub fn is_topological(&self) -> bool {
        self.nodes.iter().enumerate().all(|(k, n)| {
            n.inputs
                .iter()
                .all(|e| e.from == "image" || self.nodes[..k].iter().any(|m| m.name == e.from))
        })
    }
}

/// Lays out the node graph for `config`.
pub fn build_graph(config: &ArchConfig) -> Result<NodeGraph> {
    config.validate()?;
    let l = config.num_levels;
    let enc = &config.encoder_channels;
    let dec = &config.decoder_channels;
    let r = config.reduction_ratio;
    let mut g = NodeGraph {
        config: config.clone(),
        nodes: Vec::new(),
    };

    for i in 1..=l {
        let (from, cin) = if i == 1 {
            ("image".to_string(), config.input_channels)
        } else {
            (encoder_name(i - 1), enc[i - 2])
        };
        g.nodes.push(GraphNode {
            name: encoder_name(i),
            kind: NodeKind::Encoder,
            level: i,
            column: 0,
            inputs: vec![Edge { from, channels: cin, upsampled: false }],
            in_channels: cin,
            out_channels: enc[i - 1],
            stride: 1 << i,
            fuse: None,
        });
    }

    // Aggregation nodes column by column, so every deeper input already exists.
    for j in 1..l {
        for i in 1..l {
            if j > config.row_len(i) {
                continue;
            }
            let deeper = if j == 1 { encoder_name(i + 1) } else { aggregation_name(i + 1, j - 1) };
            let mut inputs = vec![Edge { from: encoder_name(i), channels: enc[i - 1], upsampled: false }];
            for k in 1..j {
                inputs.push(Edge { from: aggregation_name(i, k), channels: g.width(&aggregation_name(i, k)), upsampled: false });
            }
            let deep_c = g.width(&deeper);
            if deep_c < 2 {
                return Err(Error::Build {
                    node: aggregation_name(i, j),
                    detail: format!("deeper input {deeper} is too narrow to halve"),
                });
            }
            inputs.push(Edge { from: deeper, channels: deep_c / 2, upsampled: true });
            let in_channels = inputs.iter().map(|e| e.channels).sum();
            g.nodes.push(GraphNode {
                name: aggregation_name(i, j),
                kind: NodeKind::Aggregation,
                level: i,
                column: j,
                inputs,
                in_channels,
                out_channels: config.aggregation_channels[i - 1],
                stride: 1 << i,
                fuse: None,
            });
        }
    }

    for i in (0..l).rev() {
        let deeper = if i + 1 == l { encoder_name(l) } else { decoder_name(i + 1) };
        let up = Edge { from: deeper, channels: dec[i], upsampled: true };
        let mut inputs = Vec::new();
        if i > 0 {
            inputs.push(Edge { from: encoder_name(i), channels: enc[i - 1], upsampled: false });
            for j in 1..=config.row_len(i) {
                inputs.push(Edge { from: aggregation_name(i, j), channels: g.width(&aggregation_name(i, j)), upsampled: false });
            }
        }
        inputs.push(up);
        let in_channels: usize = inputs.iter().map(|e| e.channels).sum();
        let fuse = (i > 0).then_some(FuseBlockSpec { c_in: in_channels, c_out: dec[i], r });
        if let (Some(spec), FusionKind::Fse | FusionKind::SePlusConv) = (fuse, config.fusion_kind) {
            if spec.c_in % r != 0 {
                return Err(Error::Build {
                    node: decoder_name(i),
                    detail: format!("reduction ratio {r} does not divide {} fused channels", spec.c_in),
                });
            }
        }
        g.nodes.push(GraphNode {
            name: decoder_name(i),
            kind: NodeKind::Decoder,
            level: i,
            column: 0,
            inputs,
            in_channels,
            out_channels: dec[i],
            stride: 1 << i,
            fuse,
        });
    }

    for i in 0..config.num_output_scales {
        g.nodes.push(GraphNode {
            name: head_name(i),
            kind: NodeKind::DispHead,
            level: i,
            column: 0,
            inputs: vec![Edge { from: decoder_name(i), channels: dec[i], upsampled: false }],
            in_channels: dec[i],
            out_channels: 1,
            stride: 1 << i,
            fuse: None,
        });
    }
    debug_assert!(g.is_topological());
    Ok(g)
}

#[derive(Clone, Debug)]
struct AggNode {
    row: usize,
    col: usize,
    up: UpBlock,
    conv: Conv,
}

#[derive(Clone, Debug)]
struct DecNode {
    up: UpBlock,
    fuse: Fusion,
}

/// Depth network: the node graph plus the layers realizing it.
#[derive(Clone, Debug)]
pub struct DepthNet {
    pub graph: NodeGraph,
    encoder: Encoder,
    aggs: Vec<AggNode>,
    /// Indexed by decoder level.
    decoders: Vec<DecNode>,
    heads: Vec<Conv>,
}

impl DepthNet {
    /// Builds the network and registers its parameters, zero-initialized;
    /// call [`ParamStore::init`] before use.
    pub fn build(config: &ArchConfig) -> Result<(DepthNet, ParamStore)> {
        let graph = build_graph(config)?;
        let mut store = ParamStore::new();
        let encoder = match config.encoder_kind {
            EncoderKind::Residual18 => Encoder::Residual(ResidualEncoder::new(
                &mut store,
                "encoder",
                "x_e",
                config.input_channels,
                &config.encoder_channels,
            )),
            EncoderKind::MobileLite => {
                Encoder::Mobile(MobileEncoder::new(&mut store, "encoder", "x_e", config.input_channels)?)
            }
        };
        let mut aggs = Vec::new();
        let mut decoders = Vec::new();
        let mut heads = Vec::new();
        for node in &graph.nodes {
            store.set_node(node.name.clone());
            let name = &node.name;
            match node.kind {
                NodeKind::Encoder => {}
                NodeKind::Aggregation => {
                    let deep = node.inputs.last().expect("deeper input");
                    let deep_c = graph.width(&deep.from);
                    aggs.push(AggNode {
                        row: node.level,
                        col: node.column,
                        up: UpBlock::new(&mut store, &format!("{name}.up"), deep_c, deep.channels),
                        conv: Conv::new(&mut store, &format!("{name}.conv"), node.in_channels, node.out_channels, ConvSpec::new(3).reflect()),
                    });
                }
                NodeKind::Decoder => {
                    let deep = node.inputs.last().expect("upsampled input");
                    let up = UpBlock::new(&mut store, &format!("{name}.up"), graph.width(&deep.from), deep.channels);
                    let conv3 = |store: &mut ParamStore| {
                        Conv::new(store, &format!("{name}.fuse.conv"), node.in_channels, node.out_channels, ConvSpec::new(3).reflect())
                    };
                    let fuse = match (node.fuse, config.fusion_kind) {
                        (None, _) | (Some(_), FusionKind::Conv3x3) => Fusion::Conv3x3(conv3(&mut store)),
                        (Some(spec), FusionKind::Fse) => Fusion::Fse(Fse::new(&mut store, &format!("{name}.fuse"), spec)?),
                        (Some(spec), FusionKind::SePlusConv) => {
                            let se = SeGate::new(&mut store, &format!("{name}.fuse.se"), spec.c_in, spec.r)?;
                            Fusion::SeConv(se, conv3(&mut store))
                        }
                    };
                    decoders.push((node.level, DecNode { up, fuse }));
                }
                NodeKind::DispHead => {
                    heads.push(Conv::new(&mut store, &format!("{name}.conv"), node.in_channels, 1, ConvSpec::new(3).reflect()));
                }
            }
        }
        decoders.sort_by_key(|(level, _)| *level);
        let decoders = decoders.into_iter().map(|(_, d)| d).collect();
        Ok((
            DepthNet {
                graph,
                encoder,
                aggs,
                decoders,
                heads,
            },
            store,
        ))
    }

    /// Builds and initializes from `seed`.
    pub fn new(config: &ArchConfig, seed: u64) -> Result<(DepthNet, ParamStore)> {
        let (net, mut store) = Self::build(config)?;
        store.init(seed);
        Ok((net, store))
    }

    pub fn config(&self) -> &ArchConfig {
        &self.graph.config
    }

    /// Encoder features x^e_1..x^e_L.
    pub fn encode<'t>(&self, ctx: &Ctx<'t, '_>, image: Var<'t>) -> Result<Vec<Var<'t>>> {
        let cfg = self.config();
        let s = image.shape();
        let m = cfg.size_multiple();
        if s.c != cfg.input_channels || s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0 {
            return contract_err(
                "forward_depth",
                format!("input {s:?} needs {} channels and sides divisible by {m}", cfg.input_channels),
            );
        }
        self.encoder.forward(ctx, image)
    }

    /// Disparity maps in (0, 1), finest first: scale `i` has resolution 1/2^i.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, image: Var<'t>) -> Result<Vec<Var<'t>>> {
        let l = self.config().num_levels;
        let e = self.encode(ctx, image)?;
        // rows[i - 1] holds x_{i,1..}
        let mut rows: Vec<Vec<Var<'t>>> = vec![Vec::new(); l];
        for a in &self.aggs {
            let deeper = if a.col == 1 { e[a.row] } else { rows[a.row][a.col - 2] };
            let mut inputs = vec![e[a.row - 1]];
            inputs.extend(rows[a.row - 1].iter().copied());
            inputs.push(a.up.forward(ctx, deeper)?);
            let x = a.conv.forward(ctx, crate::ops::concat_channels(&inputs)?)?.elu();
            rows[a.row - 1].push(x);
        }
        let mut d: Vec<Option<Var<'t>>> = vec![None; l];
        let mut deeper = e[l - 1];
        for i in (0..l).rev() {
            let node = &self.decoders[i];
            let mut inputs = Vec::new();
            if i > 0 {
                inputs.push(e[i - 1]);
                inputs.extend(rows[i - 1].iter().copied());
            }
            inputs.push(node.up.forward(ctx, deeper)?);
            let x = node.fuse.forward(ctx, &inputs)?.elu();
            d[i] = Some(x);
            deeper = x;
        }
        self.heads
            .iter()
            .enumerate()
            .map(|(i, h)| Ok(h.forward(ctx, d[i].expect("decoder output"))?.sigmoid()))
            .collect()
    }

    /// Inference-only disparities on a fresh tape, batch norm in eval mode.
    pub fn predict(&self, store: &ParamStore, image: &Tensor) -> Result<Vec<Tensor>> {
        let tape = crate::autograd::Tape::no_grad();
        let ctx = Ctx::new(&tape, store, false, false);
        let x = tape.constant(image.clone());
        Ok(self.forward(&ctx, x)?.iter().map(|v| v.value()).collect())
    }
}
