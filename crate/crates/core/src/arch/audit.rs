//! Exact parameter accounting per graph node and per fusion block.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::kv::KvMap;

use super::config::FusionKind;
use super::graph::{DepthNet, NodeKind};
use super::layers::FuseBlockSpec;
use super::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeCount {
    pub node: String,
    pub kind: NodeKind,
    pub params: usize,
}

/// A fusion block's counted parameters next to its closed form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuseCheck {
    pub node: String,
    pub spec: FuseBlockSpec,
    pub kind: FusionKind,
    pub counted: usize,
    pub closed_form: usize,
}

impl FuseCheck {
    pub fn exact(&self) -> bool {
        self.counted == self.closed_form
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditTable {
    pub nodes: Vec<NodeCount>,
    pub subtotals: BTreeMap<NodeKind, usize>,
    pub fusion: Vec<FuseCheck>,
    pub total: usize,
}

pub fn closed_form(spec: &FuseBlockSpec, kind: FusionKind) -> usize {
    match kind {
        FusionKind::Conv3x3 => spec.conv3x3_params(),
        FusionKind::Fse => spec.fse_params(),
        FusionKind::SePlusConv => spec.se_conv_params(),
    }
}

/// Sums element counts of every learnable tensor, grouped by owning node.
pub fn count_params(net: &DepthNet, store: &ParamStore) -> AuditTable {
    let mut per_node: BTreeMap<&str, usize> = BTreeMap::new();
    for p in store.entries() {
        *per_node.entry(p.node.as_str()).or_default() += p.value.numel();
    }
    let mut nodes = Vec::new();
    let mut subtotals = BTreeMap::new();
    let mut fusion = Vec::new();
    for n in &net.graph.nodes {
        let params = per_node.get(n.name.as_str()).copied().unwrap_or(0);
        *subtotals.entry(n.kind).or_default() += params;
        nodes.push(NodeCount {
            node: n.name.clone(),
            kind: n.kind,
            params,
        });
        if let Some(spec) = n.fuse {
            let prefix = format!("{}.fuse.", n.name);
            let counted = store
                .entries()
                .iter()
                .filter(|p| p.name.starts_with(&prefix))
                .map(|p| p.value.numel())
                .sum();
            let kind = net.config().fusion_kind;
            fusion.push(FuseCheck {
                node: n.name.clone(),
                spec,
                kind,
                counted,
                closed_form: closed_form(&spec, kind),
            });
        }
    }
    AuditTable {
        nodes,
        subtotals,
        fusion,
        total: store.count(),
    }
}

impl AuditTable {
    pub fn subtotal(&self, kind: NodeKind) -> usize {
        self.subtotals.get(&kind).copied().unwrap_or(0)
    }

    pub fn fusion_exact(&self) -> bool {
        self.fusion.iter().all(FuseCheck::exact)
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "parameter audit: {title}");
        let _ = writeln!(s, "{:<10} {:<12} {:>12}", "node", "kind", "params");
        for n in &self.nodes {
            let _ = writeln!(s, "{:<10} {:<12} {:>12}", n.node, n.kind.to_string(), n.params);
        }
        let _ = writeln!(s);
        for (kind, total) in &self.subtotals {
            let _ = writeln!(s, "{:<23} {:>12}", format!("subtotal {kind}"), total);
        }
        let _ = writeln!(s, "{:<23} {:>12}", "total", self.total);
        if !self.fusion.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<10} {:<8} {:>6} {:>6} {:>10} {:>12}  match", "fusion", "kind", "c_in", "c_out", "counted", "closed_form");
            for f in &self.fusion {
                let _ = writeln!(
                    s,
                    "{:<10} {:<8} {:>6} {:>6} {:>10} {:>12}  {}",
                    f.node,
                    f.kind.to_string(),
                    f.spec.c_in,
                    f.spec.c_out,
                    f.counted,
                    f.closed_form,
                    if f.exact() { "yes" } else { "NO" }
                );
            }
        }
        s
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        for n in &self.nodes {
            kv.insert(format!("node.{}", n.node), n.params);
        }
        for (kind, total) in &self.subtotals {
            kv.insert(format!("subtotal.{kind}"), total);
        }
        for f in &self.fusion {
            kv.insert(format!("fusion.{}.counted", f.node), f.counted);
            kv.insert(format!("fusion.{}.closed_form", f.node), f.closed_form);
        }
        kv.insert("total", self.total);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::config::ArchConfig;

    fn audit(cfg: &ArchConfig) -> AuditTable {
        let (net, store) = DepthNet::build(cfg).unwrap();
        count_params(&net, &store)
    }

    #[test]
    fn totals_for_reference_configs() {
        assert_eq!(audit(&ArchConfig::baseline_unet()).total, 14_329_236);
        assert_eq!(audit(&ArchConfig::hr_depth_res18(FusionKind::Conv3x3)).total, 15_666_260);
        assert_eq!(audit(&ArchConfig::hr_depth_res18(FusionKind::Fse)).total, 14_300_244);
        assert_eq!(audit(&ArchConfig::hr_depth_res18(FusionKind::SePlusConv)).total, 15_922_260);
        let lite = audit(&ArchConfig::hr_depth_lite());
        assert_eq!(lite.total, 3_189_224);
        assert_eq!(lite.subtotal(NodeKind::Encoder), 2_816_432);
    }

    #[test]
    fn every_fusion_block_matches_its_closed_form() {
        for kind in [FusionKind::Conv3x3, FusionKind::Fse, FusionKind::SePlusConv] {
            let a = audit(&ArchConfig::hr_depth_res18(kind));
            assert_eq!(a.fusion.len(), 4);
            assert!(a.fusion_exact(), "{}", a.to_text("res18"));
        }
    }

    #[test]
    fn node_counts_sum_to_total() {
        let a = audit(&ArchConfig::hr_depth_lite());
        assert_eq!(a.nodes.iter().map(|n| n.params).sum::<usize>(), a.total);
        assert_eq!(a.to_kv().require::<usize>("total").unwrap(), a.total);
    }
}
