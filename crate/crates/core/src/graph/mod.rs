//! Layer-graph IR for multi-task CNNs.
//!
//! A [`Graph`] is an immutable DAG of typed nodes that carry their own
//! weights. Every transform in the crate (pruning, BatchNorm folding,
//! re-initialization) returns a new graph.

mod analysis;
mod builder;
mod validate;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use analysis::{ReceptiveField, ShapeMap};
pub use builder::GraphBuilder;
pub use validate::Violation;
pub(crate) use analysis::op_flops;

/// Largest kernel the convolution core runs natively.
pub const MAX_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        TensorShape { channels, height, width }
    }

    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn is_positive(&self) -> bool {
        self.channels >= 1 && self.height >= 1 && self.width >= 1
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Detection,
    Segmentation,
    Soiling,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Detection, Task::Segmentation, Task::Soiling];

    pub fn index(self) -> usize {
        match self {
            Task::Detection => 0,
            Task::Segmentation => 1,
            Task::Soiling => 2,
        }
    }
}

/// 2-D convolution. Weights are `[out_ch, in_ch, k, k]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: alloc::vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: alloc::vec![0.0; out_ch],
        }
    }

    /// Weights of output filter `o`, length `in_ch * k * k`.
    pub fn filter(&self, o: usize) -> &[f32] {
        let len = self.in_ch * self.kernel * self.kernel;
        &self.weight[o * len..(o + 1) * len]
    }
}

/// Transposed convolution. Weights are `[in_ch, out_ch, k, k]` so that the
/// forward pass is the data-gradient of a convolution with the same geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl TransposedConv {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        TransposedConv {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: alloc::vec![0.0; in_ch * out_ch * kernel * kernel],
            bias: alloc::vec![0.0; out_ch],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: alloc::vec![1.0; channels],
            beta: alloc::vec![0.0; channels],
            running_mean: alloc::vec![0.0; channels],
            running_var: alloc::vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input(TensorShape),
    Conv(Conv),
    BatchNorm(BatchNorm),
    Relu,
    TransposedConv(TransposedConv),
    /// Channel-axis concatenation in slot order.
    Concat,
    Add,
    Head(Task),
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Input(_) => "input",
            NodeKind::Conv(_) => "conv",
            NodeKind::BatchNorm(_) => "batch_norm",
            NodeKind::Relu => "relu",
            NodeKind::TransposedConv(_) => "transposed_conv",
            NodeKind::Concat => "concat",
            NodeKind::Add => "add",
            NodeKind::Head(_) => "head",
        }
    }

    /// Number of input slots, `None` for variadic nodes.
    pub fn arity(&self) -> Option<usize> {
        match self {
            NodeKind::Input(_) => Some(0),
            NodeKind::Concat | NodeKind::Add => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("shape mismatch on edge {from} -> {to}: {detail}")]
    ShapeMismatch { from: NodeId, to: NodeId, detail: String },
    #[error("graph contains a cycle")]
    Cycle,
    #[error("invalid graph: {0} violation(s), first: {1}")]
    Invalid(usize, Violation),
}

/// A multi-task CNN as an immutable DAG.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: BTreeMap<NodeId, usize>,
}

impl Graph {
    /// Assemble a graph without validating it. Use [`Graph::validate`] or
    /// [`Graph::checked`] before running analyses that assume validity.
    pub fn from_parts(nodes: Vec<Node>, mut edges: Vec<Edge>) -> Self {
        edges.sort_by_key(|e| (e.to, e.slot, e.from));
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Graph { nodes, edges, index }
    }

    /// Assemble and validate.
    pub fn checked(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let g = Graph::from_parts(nodes, edges);
        let v = g.validate();
        match v.first() {
            None => Ok(g),
            Some(first) => Err(GraphError::Invalid(v.len(), first.clone())),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn node_by_name(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Input(_)))
            .map(|n| n.id)
            .collect()
    }

    pub fn heads(&self) -> Vec<(NodeId, Task)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Head(t) => Some((n.id, t)),
                _ => None,
            })
            .collect()
    }

    pub fn head(&self, task: Task) -> Option<NodeId> {
        self.heads().into_iter().find(|&(_, t)| t == task).map(|(id, _)| id)
    }

    /// Producers feeding `id`, ordered by input slot.
    pub fn producers(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.to == id).map(|e| e.from).collect()
    }

    /// Consumers of `id`'s output, in edge order.
    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.from == id).map(|e| e.to).collect()
    }

    /// Topological order (Kahn, ties by node position). Fails on cycles.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for e in &self.edges {
            if let Some(d) = indeg.get_mut(&e.to) {
                *d += 1;
            }
        }
        let pos = |id: NodeId| self.index.get(&id).copied().unwrap_or(usize::MAX);
        let mut ready: Vec<NodeId> =
            self.nodes.iter().filter(|n| indeg[&n.id] == 0).map(|n| n.id).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while !ready.is_empty() {
            // smallest position first keeps the order stable and readable
            let (k, _) = ready.iter().enumerate().min_by_key(|(_, &id)| pos(id)).unwrap();
            let id = ready.swap_remove(k);
            order.push(id);
            for e in self.edges.iter().filter(|e| e.from == id) {
                if let Some(d) = indeg.get_mut(&e.to) {
                    *d -= 1;
                    if *d == 0 {
                        ready.push(e.to);
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(GraphError::Cycle);
        }
        Ok(order)
    }

    /// Replace the kind of one node, keeping ids and edges.
    pub fn with_kind(&self, id: NodeId, kind: NodeKind) -> Result<Graph, GraphError> {
        let &i = self.index.get(&id).ok_or(GraphError::UnknownNode(id))?;
        let mut g = self.clone();
        g.nodes[i].kind = kind;
        Ok(g)
    }

    /// Replace the kinds of several nodes at once.
    pub fn map_kinds<F>(&self, mut f: F) -> Graph
    where
        F: FnMut(&Node) -> NodeKind,
    {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node { id: n.id, name: n.name.clone(), kind: f(n) })
            .collect();
        Graph::from_parts(nodes, self.edges.clone())
    }

    /// Same weights, different input resolutions. Useful for costing a
    /// fully-convolutional network at deployment size.
    pub fn with_input_shapes(&self, shapes: &BTreeMap<NodeId, TensorShape>) -> Graph {
        self.map_kinds(|n| match (&n.kind, shapes.get(&n.id)) {
            (NodeKind::Input(_), Some(s)) => NodeKind::Input(*s),
            (k, _) => k.clone(),
        })
    }

    /// Remove `id`, connecting its single producer directly to its consumers.
    pub fn bypass(&self, id: NodeId) -> Result<Graph, GraphError> {
        let producers = self.producers(id);
        if producers.len() != 1 {
            return Err(GraphError::Invalid(
                1,
                Violation::Arity { node: id, expected: 1, found: producers.len() },
            ));
        }
        let src = producers[0];
        let nodes = self.nodes.iter().filter(|n| n.id != id).cloned().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| e.to != id)
            .map(|e| if e.from == id { Edge { from: src, ..*e } } else { *e })
            .collect();
        Ok(Graph::from_parts(nodes, edges))
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }
}
