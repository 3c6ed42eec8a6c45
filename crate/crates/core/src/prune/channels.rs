//! Channel identity tracing: which conv filter (or fixed source) each
//! channel of each tensor comes from, with Add-summed channels unified.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::graph::{Graph, GraphError, NodeId, NodeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Origin {
    /// Output filter of a Conv.
    Filter(NodeId, usize),
    /// Channel of an Input or TransposedConv; never removable.
    Fixed(NodeId, usize),
}

pub(crate) struct ChannelMap {
    origins: Vec<Origin>,
    parent: Vec<usize>,
    index: BTreeMap<Origin, usize>,
    /// Per node, the origin key of each output channel.
    pub(crate) channels: BTreeMap<NodeId, Vec<usize>>,
    head_bound: Vec<bool>,
}

impl ChannelMap {
    pub(crate) fn build(graph: &Graph) -> Result<Self, GraphError> {
        let shapes = graph.infer_shapes()?;
        let mut map = ChannelMap {
            origins: Vec::new(),
            parent: Vec::new(),
            index: BTreeMap::new(),
            channels: BTreeMap::new(),
            head_bound: Vec::new(),
        };
        for id in graph.topo_order()? {
            let node = graph.node(id).expect("known node");
            let ch = shapes[&id].channels;
            let producers = graph.producers(id);
            let keys: Vec<usize> = match &node.kind {
                NodeKind::Input(_) | NodeKind::TransposedConv(_) => (0..ch).map(|c| map.key(Origin::Fixed(id, c))).collect(),
                NodeKind::Conv(_) => (0..ch).map(|c| map.key(Origin::Filter(id, c))).collect(),
                NodeKind::BatchNorm(_) | NodeKind::Relu | NodeKind::Head(_) => map.channels[&producers[0]].clone(),
                NodeKind::Concat => producers.iter().flat_map(|p| map.channels[p].clone()).collect(),
                NodeKind::Add => {
                    let first = map.channels[&producers[0]].clone();
                    for p in &producers[1..] {
                        let other = map.channels[p].clone();
                        for (&a, &b) in first.iter().zip(&other) {
                            map.union(a, b);
                        }
                    }
                    first
                }
            };
            map.channels.insert(id, keys);
        }
        map.head_bound = alloc::vec![false; map.origins.len()];
        for (head, _) in graph.heads() {
            for k in map.channels[&head].clone() {
                let r = map.find(k);
                map.head_bound[r] = true;
            }
        }
        Ok(map)
    }

    fn key(&mut self, o: Origin) -> usize {
        let k = self.origins.len();
        self.origins.push(o);
        self.parent.push(k);
        self.index.insert(o, k);
        k
    }

    pub(crate) fn find(&self, mut k: usize) -> usize {
        while self.parent[k] != k {
            k = self.parent[k];
        }
        k
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller key becomes the root so groups are stable across runs
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    pub(crate) fn filter_key(&self, node: NodeId, filter: usize) -> Option<usize> {
        self.index.get(&Origin::Filter(node, filter)).copied()
    }

    /// Equivalence classes as sorted origin lists, keyed by root.
    pub(crate) fn classes(&self) -> BTreeMap<usize, Vec<Origin>> {
        let mut out: BTreeMap<usize, Vec<Origin>> = BTreeMap::new();
        for k in 0..self.origins.len() {
            out.entry(self.find(k)).or_default().push(self.origins[k]);
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }

    pub(crate) fn is_head_bound(&self, root: usize) -> bool {
        self.head_bound[root]
    }

    /// True when the class can be removed: only conv filters, none of which
    /// reach a head output unchanged.
    pub(crate) fn removable(&self, root: usize, members: &[Origin]) -> bool {
        !self.is_head_bound(root) && members.iter().all(|o| matches!(o, Origin::Filter(..)))
    }

    /// Output channels of every node left after removing the classes in `roots`.
    pub(crate) fn kept(&self, removed: &alloc::collections::BTreeSet<usize>) -> BTreeMap<NodeId, Vec<usize>> {
        self.channels
            .iter()
            .map(|(&id, keys)| {
                let kept = keys.iter().enumerate().filter(|(_, &k)| !removed.contains(&self.find(k))).map(|(i, _)| i).collect();
                (id, kept)
            })
            .collect()
    }
}
