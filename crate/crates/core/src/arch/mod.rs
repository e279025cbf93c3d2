//! Depth and pose networks, their parameter storage, audit and checkpoints.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod graph;
pub mod layers;
pub mod params;
pub mod pose;

pub use audit::{count_params, AuditTable, FuseCheck};
pub use checkpoint::Checkpoint;
pub use config::{ArchConfig, EncoderKind, FusionKind};
pub use graph::{build_graph, DepthNet, GraphNode, NodeGraph, NodeKind};
pub use layers::FuseBlockSpec;
pub use params::{Ctx, ParamId, ParamStore};
pub use pose::{PoseConfig, PoseNet};
