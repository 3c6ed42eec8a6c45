use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Graph, NodeId, NodeKind, Task, MAX_KERNEL};

/// One structural problem found by [`Graph::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    #[error("graph contains a cycle")]
    Cycle,
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("duplicate node name {0:?}")]
    DuplicateName(String),
    #[error("edge {from} -> {to} references an unknown node")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("node {node} expects {expected} input(s), found {found}")]
    Arity { node: NodeId, expected: usize, found: usize },
    #[error("node {node} has non-contiguous input slots")]
    BadSlots { node: NodeId },
    #[error("node {0} is not reachable from any input")]
    Unreachable(NodeId),
    #[error("node {0} has no consumers and is not a head")]
    DanglingNode(NodeId),
    #[error("node {node}: kernel {kernel} exceeds the core's {MAX_KERNEL}x{MAX_KERNEL} window")]
    KernelExceedsCore { node: NodeId, kernel: usize },
    #[error("node {node}: convolution kernel {kernel} must be odd")]
    EvenKernel { node: NodeId, kernel: usize },
    #[error("node {node}: stride {stride} not in {{1, 2}}")]
    InvalidStride { node: NodeId, stride: usize },
    #[error("node {node}: parameter {param} has {found} elements, expected {expected}")]
    WeightShape { node: NodeId, param: String, expected: usize, found: usize },
    #[error("node {node}: running variance of channel {channel} is not positive")]
    NonPositiveVariance { node: NodeId, channel: usize },
    #[error("node {node}: {detail}")]
    ShapeMismatch { node: NodeId, detail: String },
    #[error("graph has no input")]
    NoInputs,
    #[error("graph has no head")]
    NoHeads,
    #[error("more than one head for task {0:?}")]
    DuplicateTask(Task),
}

impl Graph {
    /// Every structural violation; an empty list means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                out.push(Violation::DuplicateId(n.id));
            }
            if !names.insert(n.name.as_str()) {
                out.push(Violation::DuplicateName(n.name.clone()));
            }
        }
        for e in &self.edges {
            if !ids.contains(&e.from) || !ids.contains(&e.to) {
                out.push(Violation::DanglingEdge { from: e.from, to: e.to });
            }
        }

        let inputs = self.inputs();
        if inputs.is_empty() {
            out.push(Violation::NoInputs);
        }
        let heads = self.heads();
        if heads.is_empty() {
            out.push(Violation::NoHeads);
        }
        let mut tasks = BTreeSet::new();
        for &(_, t) in &heads {
            if !tasks.insert(t) {
                out.push(Violation::DuplicateTask(t));
            }
        }

        for n in &self.nodes {
            let slots: Vec<usize> =
                self.edges.iter().filter(|e| e.to == n.id).map(|e| e.slot).collect();
            match n.kind.arity() {
                Some(a) if a != slots.len() => {
                    out.push(Violation::Arity { node: n.id, expected: a, found: slots.len() })
                }
                None if slots.len() < 2 => {
                    out.push(Violation::Arity { node: n.id, expected: 2, found: slots.len() })
                }
                _ => {}
            }
            // edges are sorted by (to, slot)
            if slots.iter().enumerate().any(|(i, &s)| i != s) {
                out.push(Violation::BadSlots { node: n.id });
            }
            if !matches!(n.kind, NodeKind::Head(_)) && self.edges.iter().all(|e| e.from != n.id) {
                out.push(Violation::DanglingNode(n.id));
            }
            check_params(n.id, &n.kind, &mut out);
        }

        if self.topo_order().is_err() {
            out.push(Violation::Cycle);
            return out;
        }

        let mut reached: BTreeSet<NodeId> = inputs.iter().copied().collect();
        let mut stack = inputs.clone();
        while let Some(id) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.from == id) {
                if reached.insert(e.to) {
                    stack.push(e.to);
                }
            }
        }
        for n in &self.nodes {
            if !reached.contains(&n.id) {
                out.push(Violation::Unreachable(n.id));
            }
        }

        let mut problems = BTreeMap::new();
        self.propagate_shapes(&BTreeMap::new(), &mut problems);
        for (node, detail) in problems {
            out.push(Violation::ShapeMismatch { node, detail });
        }
        out
    }
}

fn check_params(id: NodeId, kind: &NodeKind, out: &mut Vec<Violation>) {
    let mut expect = |param: &str, expected: usize, found: usize| {
        if expected != found {
            out.push(Violation::WeightShape { node: id, param: param.into(), expected, found });
        }
    };
    match kind {
        NodeKind::Conv(c) => {
            expect("weight", c.out_ch * c.in_ch * c.kernel * c.kernel, c.weight.len());
            expect("bias", c.out_ch, c.bias.len());
            if c.kernel > MAX_KERNEL {
                out.push(Violation::KernelExceedsCore { node: id, kernel: c.kernel });
            } else if c.kernel % 2 == 0 {
                out.push(Violation::EvenKernel { node: id, kernel: c.kernel });
            }
            if !(1..=2).contains(&c.stride) {
                out.push(Violation::InvalidStride { node: id, stride: c.stride });
            }
        }
        NodeKind::TransposedConv(t) => {
            expect("weight", t.out_ch * t.in_ch * t.kernel * t.kernel, t.weight.len());
            expect("bias", t.out_ch, t.bias.len());
            if t.kernel > MAX_KERNEL || t.kernel == 0 {
                out.push(Violation::KernelExceedsCore { node: id, kernel: t.kernel });
            }
            if !(1..=2).contains(&t.stride) {
                out.push(Violation::InvalidStride { node: id, stride: t.stride });
            }
        }
        NodeKind::BatchNorm(b) => {
            let ch = b.gamma.len();
            expect("beta", ch, b.beta.len());
            expect("running_mean", ch, b.running_mean.len());
            expect("running_var", ch, b.running_var.len());
            for (channel, &v) in b.running_var.iter().enumerate() {
                if !(v > 0.0) {
                    out.push(Violation::NonPositiveVariance { node: id, channel });
                }
            }
        }
        _ => {}
    }
}
