#![allow(dead_code)]

use enf_core::engine::{HeadOutputs, Mode, Net, Tensor};
use enf_core::graph::{BatchNorm, GraphBuilder, NodeKind};
use enf_core::taskbench::Sample;
use enf_core::{Graph, Task, TensorShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A sample with Y plane of side `size`, random pixels, no annotations.
pub fn noise_sample(size: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sample {
        size,
        y: (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
        uv: (0..size * size / 2).map(|_| rng.random_range(0.0..1.0)).collect(),
        det: None,
        seg: None,
        soil: None,
    }
}

/// Random weights and biases, and BatchNorm with random affine terms and
/// running statistics.
pub fn randomize(graph: &Graph, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    graph.map_kinds(|n| match &n.kind {
        NodeKind::Conv(c) => {
            let mut c = c.clone();
            let b = (3.0 / (c.in_ch * c.kernel * c.kernel) as f32).sqrt();
            c.weight.iter_mut().for_each(|w| *w = rng.random_range(-b..b));
            c.bias.iter_mut().for_each(|w| *w = rng.random_range(-0.2..0.2));
            NodeKind::Conv(c)
        }
        NodeKind::TransposedConv(t) => {
            let mut t = t.clone();
            let b = (3.0 / (t.in_ch * t.kernel * t.kernel) as f32).sqrt();
            t.weight.iter_mut().for_each(|w| *w = rng.random_range(-b..b));
            t.bias.iter_mut().for_each(|w| *w = rng.random_range(-0.2..0.2));
            NodeKind::TransposedConv(t)
        }
        NodeKind::BatchNorm(bn) => {
            let ch = bn.channels();
            NodeKind::BatchNorm(BatchNorm {
                gamma: (0..ch).map(|_| rng.random_range(0.5..1.5)).collect(),
                beta: (0..ch).map(|_| rng.random_range(-0.3..0.3)).collect(),
                running_mean: (0..ch).map(|_| rng.random_range(-0.3..0.3)).collect(),
                running_var: (0..ch).map(|_| rng.random_range(0.5..2.0)).collect(),
                eps: bn.eps,
            })
        }
        k => k.clone(),
    })
}

/// Scalar probe loss `sum(r * out)` over every head, evaluated in train mode.
/// Also returns the sign pattern of every ReLU input (`relu_inputs` are
/// step indices, which follow the graph's topological order).
fn probe(net: &Net<f64>, batch: &[&Sample], r: &HeadOutputs<f64>, relu_inputs: &[usize]) -> (f64, Vec<Vec<bool>>) {
    let tape = net.forward(batch, Mode::Train).unwrap();
    let heads = tape.heads(net);
    let total = heads.iter().map(|(t, o)| o.data.iter().zip(&r[t].data).map(|(a, b)| a * b).sum::<f64>()).sum();
    let signs = relu_inputs.iter().map(|&i| tape.values()[i].data.iter().map(|&x| x > 0.0).collect()).collect();
    (total, signs)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

/// Compares reverse-mode parameter gradients of `graph` with a five-point
/// central-difference stencil (step 1e-3, f64). Coordinates whose
/// perturbation flips the sign of any activation sit on a ReLU kink and are
/// skipped.
pub fn gradient_check(graph: &Graph, size: usize, max_coords: usize, seed: u64) -> GradCheck {
    let mut net: Net<f64> = Net::compile(graph).unwrap();
    let samples: Vec<Sample> = (0..3).map(|i| noise_sample(size, seed * 10 + i)).collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = net.forward(&batch, Mode::Train).unwrap();
    let r: HeadOutputs<f64> = tape
        .heads(&net)
        .into_iter()
        .map(|(t, o)| {
            let data = o.data.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            (t, Tensor { n: o.n, shape: o.shape, data })
        })
        .collect();
    let analytic = net.backward(&tape, &r);
    let order = graph.topo_order().unwrap();
    let relu_inputs: Vec<usize> = order
        .iter()
        .filter(|&&id| matches!(graph.node(id).unwrap().kind, NodeKind::Relu))
        .map(|&id| order.iter().position(|&p| p == graph.producers(id)[0]).unwrap())
        .collect();
    let (_, base_signs) = probe(&net, &batch, &r, &relu_inputs);

    let n = net.params().len();
    let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { (0..max_coords).map(|_| rng.random_range(0..n)).collect() };
    let h = 1e-3;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    for &i in &coords {
        let orig = net.params()[i];
        let mut f = [0.0; 4];
        let mut kink = false;
        for (j, d) in [2.0, 1.0, -1.0, -2.0].iter().enumerate() {
            net.params_mut()[i] = orig + d * h;
            let (v, signs) = probe(&net, &batch, &r, &relu_inputs);
            f[j] = v;
            kink |= signs != base_signs;
        }
        net.params_mut()[i] = orig;
        if kink {
            skipped += 1;
            continue;
        }
        let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    GradCheck { checked, skipped, worst_rel: worst }
}

/// A random valid single-input graph: a stem conv followed by `blocks`
/// random blocks (conv, BN, ReLU, upsampling, residual add, concat branch,
/// side heads), ending in a segmentation head.
pub fn random_graph(rng: &mut ChaCha8Rng, size: usize, blocks: usize, width: usize) -> Graph {
    let mut b = GraphBuilder::new();
    let y = b.input("y", TensorShape::new(1, size, size));
    let mut x = b.conv("stem", y, width, 3, 1);
    let mut taps = 0;
    for i in 0..blocks {
        let name = format!("b{i}");
        let side = b.shape(x).height;
        x = match rng.random_range(0..7) {
            0 => {
                let k = [1, 3, 5][rng.random_range(0..3)];
                let stride = if side > 4 { rng.random_range(1..3) } else { 1 };
                b.conv(&name, x, width + rng.random_range(0..32), k, stride)
            }
            1 => b.batch_norm(&name, x),
            2 => b.relu(&name, x),
            3 if side <= 32 => b.transposed_conv(&name, x, rng.random_range(4..20), 2, 2),
            3 => b.conv(&name, x, rng.random_range(4..20), 1, 1),
            4 => {
                let ch = b.shape(x).channels;
                let r = b.conv(&format!("{name}_r"), x, ch, 3, 1);
                b.sum(&name, &[x, r])
            }
            5 => {
                let r = b.conv(&format!("{name}_r"), x, rng.random_range(4..20), 1, 1);
                b.concat(&name, &[r, x])
            }
            _ if taps < 2 => {
                let task = [Task::Detection, Task::Soiling][taps];
                taps += 1;
                let t = b.conv(&format!("{name}_t"), x, 6, 3, 1);
                b.head(&format!("{name}_head"), t, task);
                x
            }
            _ => x,
        };
    }
    b.head("out", x, Task::Segmentation);
    b.build().expect("generated graphs are valid")
}
