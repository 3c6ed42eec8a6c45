use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, NodeId, NodeKind, TensorShape};

pub type ShapeMap = BTreeMap<NodeId, TensorShape>;

/// Receptive field of one head, in pixels of the largest input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub rf_size: f64,
    pub effective_stride: f64,
    /// Image coordinate of the centre of the first output pixel's field.
    pub offset: f64,
    pub covers_input: bool,
}

/// Output shape of one node given its input shapes.
pub(crate) fn output_shape(kind: &NodeKind, ins: &[TensorShape]) -> Result<TensorShape, String> {
    let first = |ins: &[TensorShape]| ins.first().copied().ok_or_else(|| String::from("missing input"));
    match kind {
        NodeKind::Input(s) => {
            if s.is_positive() {
                Ok(*s)
            } else {
                Err(format!("input shape {s} has a zero dimension"))
            }
        }
        NodeKind::Conv(c) => {
            let x = first(ins)?;
            if x.channels != c.in_ch {
                return Err(format!("conv expects {} channels, got {}", c.in_ch, x.channels));
            }
            let span = |d: usize| (d + 2 * c.padding).checked_sub(c.kernel).map(|v| v / c.stride.max(1) + 1);
            match (span(x.height), span(x.width)) {
                (Some(h), Some(w)) if c.out_ch > 0 => Ok(TensorShape::new(c.out_ch, h, w)),
                _ => Err(format!("conv k={} does not fit input {x}", c.kernel)),
            }
        }
        NodeKind::TransposedConv(t) => {
            let x = first(ins)?;
            if x.channels != t.in_ch {
                return Err(format!("transposed conv expects {} channels, got {}", t.in_ch, x.channels));
            }
            let span = |d: usize| ((d - 1) * t.stride + t.kernel).checked_sub(2 * t.padding);
            match (span(x.height), span(x.width)) {
                (Some(h), Some(w)) if h > 0 && w > 0 && t.out_ch > 0 => Ok(TensorShape::new(t.out_ch, h, w)),
                _ => Err(format!("transposed conv produces an empty map from {x}")),
            }
        }
        NodeKind::BatchNorm(b) => {
            let x = first(ins)?;
            if x.channels != b.channels() {
                return Err(format!("batch norm over {} channels, got {}", b.channels(), x.channels));
            }
            Ok(x)
        }
        NodeKind::Relu | NodeKind::Head(_) => first(ins),
        NodeKind::Concat => {
            let x = first(ins)?;
            let mut c = 0;
            for s in ins {
                if (s.height, s.width) != (x.height, x.width) {
                    return Err(format!("concat spatial mismatch {x} vs {s}"));
                }
                c += s.channels;
            }
            Ok(TensorShape::new(c, x.height, x.width))
        }
        NodeKind::Add => {
            let x = first(ins)?;
            if let Some(s) = ins.iter().find(|s| **s != x) {
                return Err(format!("add shape mismatch {x} vs {s}"));
            }
            Ok(x)
        }
    }
}

/// FLOPs of one node (1 MAC = 2 FLOPs) from the shapes it sees.
pub(crate) fn op_flops(kind: &NodeKind, ins: &[TensorShape], out: &TensorShape) -> u64 {
    let out_el = out.elements() as u64;
    match kind {
        NodeKind::Conv(c) => {
            let k2 = (c.kernel * c.kernel) as u64;
            2 * k2 * ins[0].channels as u64 * out_el
        }
        NodeKind::TransposedConv(t) => {
            let k2 = (t.kernel * t.kernel) as u64;
            2 * k2 * ins[0].elements() as u64 * out.channels as u64
        }
        NodeKind::BatchNorm(_) => 2 * out_el,
        NodeKind::Relu => out_el,
        NodeKind::Add => (ins.len().saturating_sub(1)) as u64 * out_el,
        NodeKind::Input(_) | NodeKind::Concat | NodeKind::Head(_) => 0,
    }
}

pub(crate) fn op_params(kind: &NodeKind) -> u64 {
    match kind {
        NodeKind::Conv(c) => (c.out_ch * c.in_ch * c.kernel * c.kernel + c.out_ch) as u64,
        NodeKind::TransposedConv(t) => (t.out_ch * t.in_ch * t.kernel * t.kernel + t.out_ch) as u64,
        NodeKind::BatchNorm(b) => 4 * b.channels() as u64,
        _ => 0,
    }
}

impl Graph {
    /// Shape propagation that keeps going past errors, recording them per node.
    pub(crate) fn propagate_shapes(
        &self,
        overrides: &ShapeMap,
        problems: &mut BTreeMap<NodeId, String>,
    ) -> ShapeMap {
        let mut shapes = ShapeMap::new();
        let Ok(order) = self.topo_order() else {
            return shapes;
        };
        for id in order {
            let node = self.node(id).expect("topo order only yields known nodes");
            let producers = self.producers(id);
            let mut ins = Vec::with_capacity(producers.len());
            for p in &producers {
                match shapes.get(p) {
                    Some(s) => ins.push(*s),
                    None => break,
                }
            }
            if ins.len() != producers.len() {
                continue;
            }
            let kind = match (&node.kind, overrides.get(&id)) {
                (NodeKind::Input(_), Some(s)) => NodeKind::Input(*s),
                (k, _) => k.clone(),
            };
            match output_shape(&kind, &ins) {
                Ok(s) => {
                    shapes.insert(id, s);
                }
                Err(detail) => {
                    problems.insert(id, detail);
                }
            }
        }
        shapes
    }

    /// Output shape of every node, using the shapes stored on the input nodes.
    pub fn infer_shapes(&self) -> Result<ShapeMap, GraphError> {
        self.infer_shapes_with(&ShapeMap::new())
    }

    /// Output shape of every node with some input shapes overridden.
    pub fn infer_shapes_with(&self, input_shapes: &ShapeMap) -> Result<ShapeMap, GraphError> {
        let mut problems = BTreeMap::new();
        let shapes = self.propagate_shapes(input_shapes, &mut problems);
        if let Some((&to, detail)) = problems.iter().next() {
            let from = self.producers(to).first().copied().unwrap_or(to);
            return Err(GraphError::ShapeMismatch { from, to, detail: detail.clone() });
        }
        if shapes.len() != self.nodes.len() {
            // Unreachable through the checks above unless a cycle exists.
            return Err(GraphError::Cycle);
        }
        Ok(shapes)
    }

    pub fn input_shapes(&self, id: NodeId, shapes: &ShapeMap) -> Vec<TensorShape> {
        self.producers(id).iter().map(|p| shapes[p]).collect()
    }

    pub fn count_params(&self) -> u64 {
        self.nodes.iter().map(|n| op_params(&n.kind)).sum()
    }

    pub fn count_flops(&self) -> Result<u64, GraphError> {
        let shapes = self.infer_shapes()?;
        Ok(self.count_flops_with(&shapes))
    }

    /// FLOPs from precomputed shapes.
    pub fn count_flops_with(&self, shapes: &ShapeMap) -> u64 {
        self.nodes
            .iter()
            .map(|n| op_flops(&n.kind, &self.input_shapes(n.id, shapes), &shapes[&n.id]))
            .sum()
    }

    /// FLOPs of a single node.
    pub fn node_flops(&self, id: NodeId, shapes: &ShapeMap) -> u64 {
        let n = self.node(id).expect("known node");
        op_flops(&n.kind, &self.input_shapes(id, shapes), &shapes[&id])
    }

    /// Receptive field at every head, in pixels of the largest input plane.
    pub fn receptive_field(&self) -> Result<BTreeMap<NodeId, ReceptiveField>, GraphError> {
        let shapes = self.infer_shapes()?;
        let reference = self
            .inputs()
            .iter()
            .map(|i| shapes[i])
            .max_by_key(|s| s.height.max(s.width))
            .unwrap_or(TensorShape::new(1, 1, 1));
        let ref_extent = reference.height.max(reference.width) as f64;

        // (rf, jump, start) per node
        let mut state: BTreeMap<NodeId, (f64, f64, f64)> = BTreeMap::new();
        for id in self.topo_order()? {
            let node = self.node(id).expect("known node");
            let ins: Vec<(f64, f64, f64)> = self.producers(id).iter().map(|p| state[p]).collect();
            let s = match &node.kind {
                NodeKind::Input(_) => {
                    let jump = reference.height as f64 / shapes[&id].height as f64;
                    (jump, jump, (jump - 1.0) / 2.0)
                }
                NodeKind::Conv(c) => {
                    let (rf, jump, start) = ins[0];
                    let k = c.kernel as f64;
                    let centre = (k - 1.0) / 2.0 - c.padding as f64;
                    (rf + (k - 1.0) * jump, jump * c.stride as f64, start + centre * jump)
                }
                NodeKind::TransposedConv(t) => {
                    let (rf, jump, start) = ins[0];
                    let taps = t.kernel.div_ceil(t.stride) as f64;
                    let out_jump = jump / t.stride as f64;
                    let shift = (t.kernel as f64 - 1.0) / 2.0 - t.padding as f64;
                    (rf + (taps - 1.0) * jump, out_jump, start - shift * out_jump)
                }
                NodeKind::Concat | NodeKind::Add => {
                    let best = ins
                        .iter()
                        .copied()
                        .fold((0.0f64, f64::INFINITY, 0.0f64), |acc, x| {
                            if x.0 > acc.0 { (x.0, acc.1.min(x.1), x.2) } else { (acc.0, acc.1.min(x.1), acc.2) }
                        });
                    best
                }
                _ => ins[0],
            };
            state.insert(id, s);
        }
        Ok(self
            .heads()
            .into_iter()
            .map(|(id, _)| {
                let (rf, jump, start) = state[&id];
                (
                    id,
                    ReceptiveField {
                        rf_size: rf,
                        effective_stride: jump,
                        offset: start,
                        covers_input: rf >= ref_extent,
                    },
                )
            })
            .collect())
    }
}
