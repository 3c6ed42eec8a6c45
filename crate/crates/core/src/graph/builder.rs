use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::analysis::output_shape;
use super::{BatchNorm, Conv, Edge, Graph, GraphError, Node, NodeId, NodeKind, Task, TensorShape, TransposedConv};

/// Incremental graph construction with on-the-fly shape tracking. Parameters
/// start at zero (BatchNorm at identity); see [`crate::demo::initialize`].
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    shapes: BTreeMap<NodeId, TensorShape>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shape of a node added so far. Zero-sized when shape tracking failed.
    pub fn shape(&self, id: NodeId) -> TensorShape {
        self.shapes.get(&id).copied().unwrap_or(TensorShape::new(0, 0, 0))
    }

    pub fn add(&mut self, name: &str, kind: NodeKind, inputs: &[NodeId]) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let ins: Vec<TensorShape> = inputs.iter().map(|&i| self.shape(i)).collect();
        if let Ok(s) = output_shape(&kind, &ins) {
            self.shapes.insert(id, s);
        }
        for (slot, &from) in inputs.iter().enumerate() {
            self.edges.push(Edge { from, to: id, slot });
        }
        self.nodes.push(Node { id, name: name.to_string(), kind });
        id
    }

    pub fn input(&mut self, name: &str, shape: TensorShape) -> NodeId {
        self.add(name, NodeKind::Input(shape), &[])
    }

    /// Convolution with "same" padding for odd kernels.
    pub fn conv(&mut self, name: &str, src: NodeId, out_ch: usize, kernel: usize, stride: usize) -> NodeId {
        let in_ch = self.shape(src).channels;
        let conv = Conv::zeros(in_ch, out_ch, kernel, stride, kernel / 2);
        self.add(name, NodeKind::Conv(conv), &[src])
    }

    pub fn batch_norm(&mut self, name: &str, src: NodeId) -> NodeId {
        let ch = self.shape(src).channels;
        self.add(name, NodeKind::BatchNorm(BatchNorm::identity(ch)), &[src])
    }

    pub fn relu(&mut self, name: &str, src: NodeId) -> NodeId {
        self.add(name, NodeKind::Relu, &[src])
    }

    /// Conv -> BatchNorm -> ReLU, named `{name}`, `{name}_bn`, `{name}_relu`.
    pub fn conv_bn_relu(&mut self, name: &str, src: NodeId, out_ch: usize, kernel: usize, stride: usize) -> NodeId {
        let c = self.conv(name, src, out_ch, kernel, stride);
        let b = self.batch_norm(&[name, "_bn"].concat(), c);
        self.relu(&[name, "_relu"].concat(), b)
    }

    pub fn transposed_conv(&mut self, name: &str, src: NodeId, out_ch: usize, kernel: usize, stride: usize) -> NodeId {
        let in_ch = self.shape(src).channels;
        let t = TransposedConv::zeros(in_ch, out_ch, kernel, stride, 0);
        self.add(name, NodeKind::TransposedConv(t), &[src])
    }

    pub fn concat(&mut self, name: &str, srcs: &[NodeId]) -> NodeId {
        self.add(name, NodeKind::Concat, srcs)
    }

    pub fn sum(&mut self, name: &str, srcs: &[NodeId]) -> NodeId {
        self.add(name, NodeKind::Add, srcs)
    }

    pub fn head(&mut self, name: &str, src: NodeId, task: Task) -> NodeId {
        self.add(name, NodeKind::Head(task), &[src])
    }

    pub fn build(self) -> Result<Graph, GraphError> {
        Graph::checked(self.nodes, self.edges)
    }

    /// Build without validation (for constructing deliberately broken graphs).
    pub fn build_unchecked(self) -> Graph {
        Graph::from_parts(self.nodes, self.edges)
    }

    pub fn name_of(&self, id: NodeId) -> String {
        self.nodes[id.0 as usize].name.clone()
    }
}
