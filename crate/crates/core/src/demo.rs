//! The bundled toy multi-task network and weight initialization.

#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphBuilder, GraphError, NodeKind, Task, TensorShape};

/// Shape parameters of the bundled network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DemoSpec {
    /// Side of the square Y plane; must be divisible by 16.
    pub image: usize,
    /// Segmentation classes including background (class 0).
    pub seg_classes: usize,
    pub soil_classes: usize,
    /// Base filter count; the encoder widens to 6x this.
    pub width: usize,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec { image: 64, seg_classes: 3, soil_classes: 2, width: 16 }
    }
}

impl DemoSpec {
    /// Detection head channels: objectness, object classes, four box terms.
    pub fn det_channels(&self) -> usize {
        1 + (self.seg_classes - 1) + 4
    }

    pub fn det_grid(&self) -> usize {
        self.image / 8
    }
}

/// The bundled three-head network (about 50 MFLOP at the default spec).
///
/// A Y plane and a half-resolution UV pair feed a strided 5x5 encoder with one
/// residual block; heads are a YOLO-style grid conv, an FCN-style decoder with
/// transposed convolutions and skip concatenations, and a 4x4 tiled soiling
/// conv. Parameters are zero; call [`initialize`].
pub fn multitask_graph(spec: &DemoSpec) -> Result<Graph, GraphError> {
    let w = spec.width;
    let s = spec.image;
    let mut b = GraphBuilder::new();
    let y = b.input("y", TensorShape::new(1, s, s));
    let uv = b.input("uv", TensorShape::new(2, s / 2, s / 2));

    let e1 = b.conv_bn_relu("e1", y, w, 5, 2);
    let u1 = b.conv_bn_relu("u1", uv, w / 2, 5, 1);
    let cat0 = b.concat("cat0", &[e1, u1]);
    let e2 = b.conv_bn_relu("e2", cat0, 2 * w, 5, 2);
    let e3 = b.conv_bn_relu("e3", e2, 2 * w, 5, 1);
    let e4 = b.conv_bn_relu("e4", e3, 3 * w, 5, 2);
    let r1 = b.conv("r1", e4, 3 * w, 5, 1);
    let r1 = b.batch_norm("r1_bn", r1);
    let res = b.sum("res", &[e4, r1]);
    let res = b.relu("res_relu", res);
    let e5 = b.conv_bn_relu("e5", res, 6 * w, 5, 2);

    let det = b.conv("det", res, spec.det_channels(), 3, 1);
    b.head("det_head", det, Task::Detection);

    let t1 = b.transposed_conv("up1", res, 2 * w, 2, 2);
    let t1 = b.relu("up1_relu", t1);
    let cat1 = b.concat("cat1", &[t1, e3]);
    let s1 = b.conv_bn_relu("s1", cat1, w, 3, 1);
    let t2 = b.transposed_conv("up2", s1, w, 2, 2);
    let t2 = b.relu("up2_relu", t2);
    let cat2 = b.concat("cat2", &[t2, e1]);
    let t3 = b.transposed_conv("up3", cat2, w / 2, 2, 2);
    let t3 = b.relu("up3_relu", t3);
    let seg = b.conv("seg", t3, spec.seg_classes, 3, 1);
    b.head("seg_head", seg, Task::Segmentation);

    let soil = b.conv("soil", e5, spec.soil_classes, 3, 1);
    b.head("soil_head", soil, Task::Soiling);
    b.build()
}

/// Kaiming-uniform weights, zero biases, identity BatchNorm. The detection
/// objectness bias starts at a 10% prior.
pub fn initialize(graph: &Graph, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det_conv = graph
        .head(Task::Detection)
        .and_then(|h| graph.producers(h).first().copied());
    graph.map_kinds(|n| match &n.kind {
        NodeKind::Conv(c) => {
            let mut c = c.clone();
            let bound = (6.0 / (c.in_ch * c.kernel * c.kernel) as f32).sqrt();
            c.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            c.bias.iter_mut().for_each(|b| *b = 0.0);
            if Some(n.id) == det_conv {
                c.bias[0] = libm::logf(0.1 / 0.9);
            }
            NodeKind::Conv(c)
        }
        NodeKind::TransposedConv(t) => {
            let mut t = t.clone();
            let fan_in = (t.in_ch * t.kernel * t.kernel / (t.stride * t.stride)).max(1);
            let bound = (6.0 / fan_in as f32).sqrt();
            t.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            t.bias.iter_mut().for_each(|b| *b = 0.0);
            NodeKind::TransposedConv(t)
        }
        NodeKind::BatchNorm(bn) => NodeKind::BatchNorm(crate::graph::BatchNorm {
            eps: bn.eps,
            ..crate::graph::BatchNorm::identity(bn.channels())
        }),
        k => k.clone(),
    })
}

/// The same network with its inputs resized so the largest plane is
/// `image` pixels square; smaller planes keep their ratio to it. Weights are
/// untouched, so this is how a model trained at toy resolution is costed at
/// deployment resolution.
pub fn at_resolution(graph: &Graph, image: usize) -> Graph {
    let inputs: alloc::vec::Vec<_> = graph
        .nodes()
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Input(s) => Some((n.id, s)),
            _ => None,
        })
        .collect();
    let largest = inputs.iter().map(|(_, s)| s.height).max().unwrap_or(image).max(1);
    let shapes = inputs
        .into_iter()
        .map(|(id, s)| (id, TensorShape::new(s.channels, s.height * image / largest, s.width * image / largest)))
        .collect();
    graph.with_input_shapes(&shapes)
}
