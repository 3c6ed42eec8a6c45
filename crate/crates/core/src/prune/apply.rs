use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::channels::ChannelMap;
use super::{PruneError, PruneMask};
use crate::graph::{BatchNorm, Conv, Graph, GraphError, NodeKind, TransposedConv};

/// Remove the masked filters and everything that depends on them: BN
/// channels, input-channel slices of downstream convs (through ReLU, Concat
/// offsets and Add), and the Add-coupled filters of other branches.
pub fn apply_prune(graph: &Graph, mask: &PruneMask) -> Result<Graph, PruneError> {
    let map = ChannelMap::build(graph)?;
    let classes = map.classes();
    let mut removed = BTreeSet::new();
    for (&node, filters) in &mask.filters {
        let out_ch = match graph.node(node).map(|n| &n.kind) {
            Some(NodeKind::Conv(c)) => c.out_ch,
            Some(_) => return Err(PruneError::Structural { node, detail: "only conv filters can be pruned".to_string() }),
            None => return Err(GraphError::UnknownNode(node).into()),
        };
        for &f in filters {
            let key = map.filter_key(node, f).filter(|_| f < out_ch).ok_or_else(|| PruneError::Structural {
                node,
                detail: alloc::format!("filter {f} out of range for {out_ch} filters"),
            })?;
            let root = map.find(key);
            let members = &classes[&root];
            if !map.removable(root, members) {
                return Err(PruneError::Structural {
                    node,
                    detail: alloc::format!("filter {f} feeds a head or is summed with a fixed channel"),
                });
            }
            removed.insert(root);
        }
    }
    let kept = map.kept(&removed);
    for (id, k) in &kept {
        if k.is_empty() {
            return Err(PruneError::Structural { node: *id, detail: "every channel would be removed".to_string() });
        }
    }

    let pruned = graph.map_kinds(|n| {
        let ko = &kept[&n.id];
        let ki = graph.producers(n.id).first().map(|p| &kept[p]);
        match &n.kind {
            NodeKind::Conv(c) => {
                let ki = ki.expect("conv has an input");
                let k2 = c.kernel * c.kernel;
                let mut weight = Vec::with_capacity(ko.len() * ki.len() * k2);
                for &o in ko {
                    let filter = c.filter(o);
                    for &i in ki {
                        weight.extend_from_slice(&filter[i * k2..(i + 1) * k2]);
                    }
                }
                NodeKind::Conv(Conv {
                    in_ch: ki.len(),
                    out_ch: ko.len(),
                    weight,
                    bias: ko.iter().map(|&o| c.bias[o]).collect(),
                    ..*c
                })
            }
            NodeKind::TransposedConv(t) => {
                let ki = ki.expect("transposed conv has an input");
                let row = t.out_ch * t.kernel * t.kernel;
                let weight = ki.iter().flat_map(|&i| t.weight[i * row..(i + 1) * row].iter().copied()).collect();
                NodeKind::TransposedConv(TransposedConv { in_ch: ki.len(), weight, bias: t.bias.clone(), ..*t })
            }
            NodeKind::BatchNorm(bn) => {
                let pick = |v: &[f32]| ko.iter().map(|&c| v[c]).collect();
                NodeKind::BatchNorm(BatchNorm {
                    gamma: pick(&bn.gamma),
                    beta: pick(&bn.beta),
                    running_mean: pick(&bn.running_mean),
                    running_var: pick(&bn.running_var),
                    eps: bn.eps,
                })
            }
            k => k.clone(),
        }
    });
    let violations = pruned.validate();
    if let Some(v) = violations.first() {
        return Err(GraphError::Invalid(violations.len(), v.clone()).into());
    }
    Ok(pruned)
}
