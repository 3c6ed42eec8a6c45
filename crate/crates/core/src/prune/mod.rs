//! Structured filter pruning: scoring, Add-aware coupling, global selection
//! against a FLOPs budget, and the iterative prune / fine-tune loop.

mod apply;
mod channels;
mod schedule;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use apply::apply_prune;
pub use schedule::{iterative_prune, PruneSchedule, PruneTrace, TraceStep};

use crate::engine::EngineError;
use crate::graph::{op_flops, Graph, GraphError, NodeId, NodeKind, TensorShape};
use channels::{ChannelMap, Origin};

/// Every prunable conv keeps at least this many filters.
pub const MIN_FILTERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneCriterion {
    /// Mean absolute weight of the filter.
    FilterNorm,
    /// |gamma| of the BatchNorm channel right after the filter.
    BatchNormGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub node: NodeId,
    pub filter: usize,
    pub score: f64,
}

/// Filters that must be removed together because their outputs are summed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingGroup {
    /// Sorted `(conv, filter)` pairs.
    pub members: Vec<(NodeId, usize)>,
}

/// Filters to remove, per conv node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub filters: BTreeMap<NodeId, BTreeSet<usize>>,
}

impl PruneMask {
    pub fn is_empty(&self) -> bool {
        self.filters.values().all(|f| f.is_empty())
    }

    pub fn len(&self) -> usize {
        self.filters.values().map(|f| f.len()).sum()
    }

    pub fn insert(&mut self, node: NodeId, filter: usize) {
        self.filters.entry(node).or_default().insert(filter);
    }

    pub fn contains(&self, node: NodeId, filter: usize) -> bool {
        self.filters.get(&node).is_some_and(|f| f.contains(&filter))
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PruneError {
    #[error("conv {node} is not directly followed by a BatchNorm")]
    CriterionInapplicable { node: NodeId },
    #[error("cannot remove {requested} FLOPs; guards allow at most {achievable}")]
    TargetUnreachable { requested: u64, achievable: u64 },
    #[error("cannot prune at {node}: {detail}")]
    Structural { node: NodeId, detail: String },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Convs whose filters reach a head without passing through another
/// convolution; these are never scored or pruned.
fn exempt_convs(graph: &Graph, map: &ChannelMap) -> BTreeSet<NodeId> {
    graph
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Conv(_)))
        .filter(|n| map.channels[&n.id].iter().any(|&k| map.is_head_bound(map.find(k))))
        .map(|n| n.id)
        .collect()
}

/// One score per filter of every prunable conv, in node then filter order.
pub fn score_filters(graph: &Graph, criterion: PruneCriterion) -> Result<Vec<FilterScore>, PruneError> {
    let map = ChannelMap::build(graph)?;
    let exempt = exempt_convs(graph, &map);
    let mut out = Vec::new();
    for node in graph.nodes() {
        let NodeKind::Conv(c) = &node.kind else { continue };
        if exempt.contains(&node.id) {
            continue;
        }
        match criterion {
            PruneCriterion::FilterNorm => {
                let fan_in = (c.in_ch * c.kernel * c.kernel) as f64;
                for f in 0..c.out_ch {
                    let l1: f64 = c.filter(f).iter().map(|w| (*w as f64).abs()).sum();
                    out.push(FilterScore { node: node.id, filter: f, score: l1 / fan_in });
                }
            }
            PruneCriterion::BatchNormGamma => {
                let consumers = graph.consumers(node.id);
                let bn = match consumers.as_slice() {
                    [only] => match &graph.node(*only).expect("known node").kind {
                        NodeKind::BatchNorm(bn) => bn,
                        _ => return Err(PruneError::CriterionInapplicable { node: node.id }),
                    },
                    _ => return Err(PruneError::CriterionInapplicable { node: node.id }),
                };
                for f in 0..c.out_ch {
                    out.push(FilterScore { node: node.id, filter: f, score: (bn.gamma[f] as f64).abs() });
                }
            }
        }
    }
    Ok(out)
}

/// Removable filter groups, ordered by their first member.
pub fn coupling_groups(graph: &Graph) -> Result<Vec<CouplingGroup>, PruneError> {
    let map = ChannelMap::build(graph)?;
    Ok(removable_groups(&map).into_iter().map(|(_, g)| g).collect())
}

fn removable_groups(map: &ChannelMap) -> Vec<(usize, CouplingGroup)> {
    let mut groups: Vec<(usize, CouplingGroup)> = map
        .classes()
        .into_iter()
        .filter(|(root, members)| map.removable(*root, members))
        .map(|(root, members)| {
            let members = members
                .into_iter()
                .map(|o| match o {
                    Origin::Filter(n, f) => (n, f),
                    Origin::Fixed(..) => unreachable!("removable groups hold only filters"),
                })
                .collect();
            (root, CouplingGroup { members })
        })
        .collect();
    groups.sort_by(|a, b| a.1.members.cmp(&b.1.members));
    groups
}

/// FLOPs of `graph` if every node kept only `kept[node].len()` channels.
fn flops_with_channels(graph: &Graph, order: &[NodeId], shapes: &BTreeMap<NodeId, TensorShape>, kept: &BTreeMap<NodeId, Vec<usize>>) -> u64 {
    let reduced = |id: &NodeId| {
        let s = shapes[id];
        TensorShape::new(kept[id].len(), s.height, s.width)
    };
    order
        .iter()
        .map(|id| {
            let ins: Vec<TensorShape> = graph.producers(*id).iter().map(reduced).collect();
            op_flops(&graph.node(*id).expect("known node").kind, &ins, &reduced(id))
        })
        .sum()
}

/// Greedy global selection: groups ranked by summed member score (ties by
/// first member), taken while every conv keeps [`MIN_FILTERS`], until the
/// exact FLOPs saving reaches `flops_to_remove`.
pub fn select_prune_set(
    scores: &[FilterScore],
    groups: &[CouplingGroup],
    graph: &Graph,
    flops_to_remove: u64,
) -> Result<PruneMask, PruneError> {
    let mut mask = PruneMask::default();
    if flops_to_remove == 0 {
        return Ok(mask);
    }
    let map = ChannelMap::build(graph)?;
    let shapes = graph.infer_shapes()?;
    let order = graph.topo_order()?;
    let base = graph.count_flops_with(&shapes);
    let lookup: BTreeMap<(NodeId, usize), f64> = scores.iter().map(|s| ((s.node, s.filter), s.score)).collect();

    let mut ranked: Vec<(f64, &CouplingGroup)> = groups
        .iter()
        .filter(|g| !g.members.is_empty())
        .filter_map(|g| {
            let mut total = 0.0;
            for m in &g.members {
                total += lookup.get(m)?;
            }
            Some((total, g))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.members.cmp(&b.1.members)));

    let mut remaining: BTreeMap<NodeId, usize> = graph
        .nodes()
        .iter()
        .filter_map(|n| match &n.kind {
            NodeKind::Conv(c) => Some((n.id, c.out_ch)),
            _ => None,
        })
        .collect();
    let allowed: BTreeSet<usize> = removable_groups(&map).into_iter().map(|(r, _)| r).collect();
    let mut removed = BTreeSet::new();
    let mut saved = 0;
    for (_, group) in ranked {
        let mut per_conv: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (n, _) in &group.members {
            *per_conv.entry(*n).or_default() += 1;
        }
        let fits = per_conv.iter().all(|(n, k)| remaining.get(n).is_some_and(|&r| r >= MIN_FILTERS + k));
        let roots: Option<BTreeSet<usize>> = group.members.iter().map(|&(n, f)| map.filter_key(n, f).map(|k| map.find(k))).collect();
        let Some(roots) = roots else { continue };
        if !fits || !roots.iter().all(|r| allowed.contains(r)) {
            continue;
        }
        for (n, k) in per_conv {
            *remaining.get_mut(&n).expect("conv") -= k;
        }
        removed.extend(roots);
        for &(n, f) in &group.members {
            mask.insert(n, f);
        }
        saved = base - flops_with_channels(graph, &order, &shapes, &map.kept(&removed));
        if saved >= flops_to_remove {
            return Ok(mask);
        }
    }
    Err(PruneError::TargetUnreachable { requested: flops_to_remove, achievable: saved })
}
