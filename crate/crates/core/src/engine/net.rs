use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;


use super::ops::{conv_backward, conv_forward, tconv_backward, tconv_forward, Geom};
use super::EngineError;
use crate::graph::{BatchNorm, Graph, NodeId, NodeKind, Task, TensorShape};
use crate::taskbench::Sample;
use crate::Real;

/// A batch of `n` CHW tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub shape: TensorShape,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, shape: TensorShape) -> Self {
        Tensor { n, shape, data: alloc::vec![T::zero(); n * shape.elements()] }
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let e = self.shape.elements();
        &self.data[i * e..(i + 1) * e]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let e = self.shape.elements();
        &mut self.data[i * e..(i + 1) * e]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
        }
    }
}

/// Where one parameter tensor lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub node: NodeId,
    pub name: String,
    pub role: ParamRole,
    pub offset: usize,
    pub len: usize,
}

impl ParamEntry {
    /// `"{node name}.{role}"`, the key used in weight files.
    pub fn key(&self) -> String {
        [self.name.as_str(), ".", self.role.suffix()].concat()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// BatchNorm uses running statistics.
    Inference,
    /// BatchNorm uses batch statistics.
    Train,
}

#[derive(Clone, Debug)]
enum Op {
    Input { plane: Plane },
    Conv { geom: Geom, w: usize, b: usize, out_ch: usize },
    TConv { geom: Geom, in_ch: usize, w: usize, b: usize },
    BatchNorm { gamma: usize, beta: usize, stats: usize, eps: f64 },
    Relu,
    Concat,
    Add,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Plane {
    Y,
    Uv,
}

#[derive(Clone, Debug)]
struct Step {
    node: NodeId,
    op: Op,
    ins: Vec<usize>,
    shape: TensorShape,
}

/// Executable form of a [`Graph`] in scalar type `T`, with all trainable
/// parameters in one flat vector.
#[derive(Clone, Debug)]
pub struct Net<T> {
    steps: Vec<Step>,
    params: Vec<T>,
    /// BatchNorm running mean followed by running variance, per BN node.
    stats: Vec<T>,
    layout: Vec<ParamEntry>,
    heads: Vec<(Task, usize)>,
}

/// Recorded activations of a training-mode forward pass.
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    /// Per BN step: (batch mean, inverse std) per channel.
    bn: BTreeMap<usize, (Vec<T>, Vec<T>)>,
}

/// Head outputs of a batch, keyed by task.
pub type HeadOutputs<T> = BTreeMap<Task, Tensor<T>>;

impl<T: Real> Tape<T> {
    /// Output of every step, in the net's topological order.
    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn heads(&self, net: &Net<T>) -> HeadOutputs<T> {
        net.heads.iter().map(|&(t, i)| (t, self.values[i].clone())).collect()
    }
}

impl<T: Real> Net<T> {
    pub fn compile(graph: &Graph) -> Result<Self, EngineError> {
        let violations = graph.validate();
        if let Some(v) = violations.first() {
            return Err(EngineError::InvalidGraph(v.clone()));
        }
        let shapes = graph.infer_shapes()?;
        let order = graph.topo_order()?;
        let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut net = Net { steps: Vec::new(), params: Vec::new(), stats: Vec::new(), layout: Vec::new(), heads: Vec::new() };
        for &id in &order {
            let node = graph.node(id).expect("known node");
            let ins: Vec<usize> = graph.producers(id).iter().map(|p| pos[p]).collect();
            let shape = shapes[&id];
            let in_shape = graph.producers(id).first().map(|p| shapes[p]);
            let op = match &node.kind {
                NodeKind::Input(s) => {
                    let plane = match s.channels {
                        1 => Plane::Y,
                        2 => Plane::Uv,
                        c => return Err(EngineError::UnsupportedInput { node: id, channels: c }),
                    };
                    Op::Input { plane }
                }
                NodeKind::Conv(c) => {
                    let x = in_shape.expect("conv has an input");
                    let geom = Geom { c: x.channels, h: x.height, w: x.width, k: c.kernel, s: c.stride, p: c.padding, oh: shape.height, ow: shape.width };
                    let w = net.push_param(id, &node.name, ParamRole::Weight, &c.weight);
                    let b = net.push_param(id, &node.name, ParamRole::Bias, &c.bias);
                    Op::Conv { geom, w, b, out_ch: c.out_ch }
                }
                NodeKind::TransposedConv(t) => {
                    let x = in_shape.expect("tconv has an input");
                    let geom = Geom { c: shape.channels, h: shape.height, w: shape.width, k: t.kernel, s: t.stride, p: t.padding, oh: x.height, ow: x.width };
                    let w = net.push_param(id, &node.name, ParamRole::Weight, &t.weight);
                    let b = net.push_param(id, &node.name, ParamRole::Bias, &t.bias);
                    Op::TConv { geom, in_ch: t.in_ch, w, b }
                }
                NodeKind::BatchNorm(bn) => {
                    let gamma = net.push_param(id, &node.name, ParamRole::Gamma, &bn.gamma);
                    let beta = net.push_param(id, &node.name, ParamRole::Beta, &bn.beta);
                    let stats = net.stats.len();
                    net.stats.extend(bn.running_mean.iter().map(|&v| T::from_f32(v)));
                    net.stats.extend(bn.running_var.iter().map(|&v| T::from_f32(v)));
                    Op::BatchNorm { gamma, beta, stats, eps: bn.eps as f64 }
                }
                NodeKind::Relu => Op::Relu,
                NodeKind::Concat => Op::Concat,
                NodeKind::Add => Op::Add,
                NodeKind::Head(t) => {
                    net.heads.push((*t, net.steps.len()));
                    Op::Head
                }
            };
            net.steps.push(Step { node: id, op, ins, shape });
        }
        Ok(net)
    }

    fn push_param(&mut self, node: NodeId, name: &str, role: ParamRole, data: &[f32]) -> usize {
        let offset = self.params.len();
        self.params.extend(data.iter().map(|&v| T::from_f32(v)));
        self.layout.push(ParamEntry { node, name: name.into(), role, offset, len: data.len() });
        offset
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn param(&self, node: NodeId, role: ParamRole) -> Option<&[T]> {
        self.layout
            .iter()
            .find(|e| e.node == node && e.role == role)
            .map(|e| &self.params[e.offset..e.offset + e.len])
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().map(|&(t, _)| t).collect()
    }

    pub fn head_shape(&self, task: Task) -> Option<TensorShape> {
        self.heads.iter().find(|&&(t, _)| t == task).map(|&(_, i)| self.steps[i].shape)
    }

    /// Expected Y-plane side, from whichever input is present.
    pub fn image_size(&self) -> Option<usize> {
        self.steps.iter().find_map(|s| match s.op {
            Op::Input { plane: Plane::Y } => Some(s.shape.height),
            Op::Input { plane: Plane::Uv } => Some(2 * s.shape.height),
            _ => None,
        })
    }

    /// Write parameters and running statistics back into a copy of `graph`
    /// (which must be the graph this net was compiled from).
    pub fn to_graph(&self, graph: &Graph) -> Graph {
        let get = |node: NodeId, role: ParamRole| -> Vec<f32> {
            self.param(node, role).map(|p| p.iter().map(|v| v.as_f32()).collect()).unwrap_or_default()
        };
        let mut bn_stats: BTreeMap<NodeId, usize> = BTreeMap::new();
        for s in &self.steps {
            if let Op::BatchNorm { stats, .. } = s.op {
                bn_stats.insert(s.node, stats);
            }
        }
        graph.map_kinds(|n| match &n.kind {
            NodeKind::Conv(c) => {
                let mut c = c.clone();
                c.weight = get(n.id, ParamRole::Weight);
                c.bias = get(n.id, ParamRole::Bias);
                NodeKind::Conv(c)
            }
            NodeKind::TransposedConv(t) => {
                let mut t = t.clone();
                t.weight = get(n.id, ParamRole::Weight);
                t.bias = get(n.id, ParamRole::Bias);
                NodeKind::TransposedConv(t)
            }
            NodeKind::BatchNorm(bn) => {
                let ch = bn.channels();
                let at = bn_stats[&n.id];
                NodeKind::BatchNorm(BatchNorm {
                    gamma: get(n.id, ParamRole::Gamma),
                    beta: get(n.id, ParamRole::Beta),
                    running_mean: self.stats[at..at + ch].iter().map(|v| v.as_f32()).collect(),
                    running_var: self.stats[at + ch..at + 2 * ch].iter().map(|v| v.as_f32()).collect(),
                    eps: bn.eps,
                })
            }
            k => k.clone(),
        })
    }

    fn load_inputs(&self, step: &Step, plane: Plane, batch: &[&Sample]) -> Result<Tensor<T>, EngineError> {
        let mut t = Tensor::zeros(batch.len(), step.shape);
        for (i, s) in batch.iter().enumerate() {
            let src = match plane {
                Plane::Y => &s.y,
                Plane::Uv => &s.uv,
            };
            if src.len() != step.shape.elements() {
                return Err(EngineError::ShapeMismatch { node: step.node, expected: step.shape, found: src.len() });
            }
            for (d, &v) in t.sample_mut(i).iter_mut().zip(src) {
                *d = T::from_f32(v);
            }
        }
        Ok(t)
    }

    /// Run the batch through the network, keeping every activation.
    pub fn forward(&self, batch: &[&Sample], mode: Mode) -> Result<Tape<T>, EngineError> {
        let n = batch.len();
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.steps.len());
        let mut bn = BTreeMap::new();
        let mut scratch = Vec::new();
        for (si, step) in self.steps.iter().enumerate() {
            let out = match &step.op {
                Op::Input { plane } => self.load_inputs(step, *plane, batch)?,
                Op::Conv { geom, w, b, out_ch } => {
                    let x = &values[step.ins[0]];
                    let mut y = Tensor::zeros(n, step.shape);
                    let weight = &self.params[*w..*w + out_ch * geom.rows()];
                    let bias = &self.params[*b..*b + out_ch];
                    for i in 0..n {
                        conv_forward(x.sample(i), geom, weight, bias, y.sample_mut(i), &mut scratch);
                    }
                    y
                }
                Op::TConv { geom, in_ch, w, b } => {
                    let x = &values[step.ins[0]];
                    let mut y = Tensor::zeros(n, step.shape);
                    let weight = &self.params[*w..*w + in_ch * geom.rows()];
                    let bias = &self.params[*b..*b + geom.c];
                    for i in 0..n {
                        tconv_forward(x.sample(i), geom, *in_ch, weight, bias, y.sample_mut(i), &mut scratch);
                    }
                    y
                }
                Op::BatchNorm { gamma, beta, stats, eps } => {
                    let x = &values[step.ins[0]];
                    let ch = step.shape.channels;
                    let plane = step.shape.spatial();
                    let (mean, inv) = match mode {
                        Mode::Train => {
                            let (mean, var) = channel_moments(x);
                            let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(*eps)).sqrt()).collect();
                            bn.insert(si, (mean.clone(), inv.clone()));
                            (mean, inv)
                        }
                        Mode::Inference => {
                            let mean = self.stats[*stats..*stats + ch].to_vec();
                            let inv = self.stats[*stats + ch..*stats + 2 * ch]
                                .iter()
                                .map(|&v| T::one() / (v + T::of(*eps)).sqrt())
                                .collect();
                            (mean, inv)
                        }
                    };
                    let mut y = Tensor::zeros(n, step.shape);
                    for i in 0..n {
                        let (xs, ys) = (x.sample(i), y.sample_mut(i));
                        for c in 0..ch {
                            let g = self.params[gamma + c] * inv[c];
                            let bt = self.params[beta + c];
                            let m = mean[c];
                            for (d, &v) in ys[c * plane..(c + 1) * plane].iter_mut().zip(&xs[c * plane..(c + 1) * plane]) {
                                *d = (v - m) * g + bt;
                            }
                        }
                    }
                    y
                }
                Op::Relu => {
                    let mut y = values[step.ins[0]].clone();
                    y.data.iter_mut().for_each(|v| {
                        if *v < T::zero() {
                            *v = T::zero()
                        }
                    });
                    y
                }
                Op::Concat => {
                    let mut y = Tensor::zeros(n, step.shape);
                    for i in 0..n {
                        let mut at = 0;
                        for &src in &step.ins {
                            let part = values[src].sample(i);
                            y.sample_mut(i)[at..at + part.len()].copy_from_slice(part);
                            at += part.len();
                        }
                    }
                    y
                }
                Op::Add => {
                    let mut y = values[step.ins[0]].clone();
                    for &src in &step.ins[1..] {
                        for (d, &v) in y.data.iter_mut().zip(&values[src].data) {
                            *d += v;
                        }
                    }
                    y
                }
                Op::Head => values[step.ins[0]].clone(),
            };
            values.push(out);
        }
        Ok(Tape { values, bn })
    }

    /// Inference-mode head outputs.
    pub fn predict(&self, batch: &[&Sample]) -> Result<HeadOutputs<T>, EngineError> {
        Ok(self.forward(batch, Mode::Inference)?.heads(self))
    }

    /// Output of every node (inference mode), keyed by node id.
    pub fn activations(&self, batch: &[&Sample]) -> Result<BTreeMap<NodeId, Tensor<T>>, EngineError> {
        let tape = self.forward(batch, Mode::Inference)?;
        Ok(self.steps.iter().zip(tape.values).map(|(s, v)| (s.node, v)).collect())
    }

    /// Blend batch statistics of a training pass into the running statistics:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, tape: &Tape<T>, momentum: T) {
        for (si, step) in self.steps.iter().enumerate() {
            let Op::BatchNorm { stats, eps, .. } = step.op else { continue };
            let Some((mean, inv)) = tape.bn.get(&si) else { continue };
            let ch = mean.len();
            for c in 0..ch {
                let var = T::one() / (inv[c] * inv[c]) - T::of(eps);
                let rm = &mut self.stats[stats + c];
                *rm = momentum * *rm + (T::one() - momentum) * mean[c];
                let rv = &mut self.stats[stats + ch + c];
                *rv = momentum * *rv + (T::one() - momentum) * var.max(T::zero());
            }
        }
    }

    /// Reverse-mode gradients of the parameters given gradients at the heads.
    /// BatchNorm is differentiated in the mode the tape was recorded in.
    pub fn backward(&self, tape: &Tape<T>, head_grads: &HeadOutputs<T>) -> Vec<T> {
        let mut grads = alloc::vec![T::zero(); self.params.len()];
        let mut dvals: Vec<Option<Tensor<T>>> = alloc::vec![None; self.steps.len()];
        for &(task, i) in &self.heads {
            if let Some(g) = head_grads.get(&task) {
                dvals[i] = Some(g.clone());
            }
        }
        let mut scratch = Vec::new();
        for si in (0..self.steps.len()).rev() {
            let Some(dy) = dvals[si].take() else { continue };
            let step = &self.steps[si];
            let n = dy.n;
            match &step.op {
                Op::Input { .. } => {}
                Op::Head => accumulate(&mut dvals, step.ins[0], &self.steps, dy.data, n),
                Op::Relu => {
                    let y = &tape.values[si];
                    let mut dx = dy.data;
                    for (d, &v) in dx.iter_mut().zip(&y.data) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut dvals, step.ins[0], &self.steps, dx, n);
                }
                Op::Add => {
                    for &src in &step.ins {
                        accumulate(&mut dvals, src, &self.steps, dy.data.clone(), n);
                    }
                }
                Op::Concat => {
                    let mut at = 0;
                    for &src in &step.ins {
                        let e = self.steps[src].shape.elements();
                        let mut part = Vec::with_capacity(n * e);
                        for i in 0..n {
                            part.extend_from_slice(&dy.sample(i)[at..at + e]);
                        }
                        accumulate(&mut dvals, src, &self.steps, part, n);
                        at += e;
                    }
                }
                Op::Conv { geom, w, b, out_ch } => {
                    let x = &tape.values[step.ins[0]];
                    let wlen = out_ch * geom.rows();
                    let weight = &self.params[*w..*w + wlen];
                    let needs_dx = !matches!(self.steps[step.ins[0]].op, Op::Input { .. });
                    let mut dx = if needs_dx { Some(Tensor::zeros(n, x.shape)) } else { None };
                    let (dw, db) = split_two(&mut grads, *w, wlen, *b, *out_ch);
                    for i in 0..n {
                        let dxi = dx.as_mut().map(|t| t.sample_mut(i));
                        conv_backward(x.sample(i), geom, weight, dy.sample(i), dw, db, dxi, &mut scratch);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut dvals, step.ins[0], &self.steps, dx.data, n);
                    }
                }
                Op::TConv { geom, in_ch, w, b } => {
                    let x = &tape.values[step.ins[0]];
                    let wlen = in_ch * geom.rows();
                    let weight = &self.params[*w..*w + wlen];
                    let needs_dx = !matches!(self.steps[step.ins[0]].op, Op::Input { .. });
                    let mut dx = if needs_dx { Some(Tensor::zeros(n, x.shape)) } else { None };
                    let (dw, db) = split_two(&mut grads, *w, wlen, *b, geom.c);
                    for i in 0..n {
                        let dxi = dx.as_mut().map(|t| t.sample_mut(i));
                        tconv_backward(x.sample(i), geom, *in_ch, weight, dy.sample(i), dw, db, dxi, &mut scratch);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut dvals, step.ins[0], &self.steps, dx.data, n);
                    }
                }
                Op::BatchNorm { gamma, beta, stats, eps } => {
                    let x = &tape.values[step.ins[0]];
                    let ch = step.shape.channels;
                    let plane = step.shape.spatial();
                    let count = T::of((n * plane) as f64);
                    let train = tape.bn.get(&si);
                    let (mean, inv): (Vec<T>, Vec<T>) = match train {
                        Some((m, v)) => (m.clone(), v.clone()),
                        None => (
                            self.stats[*stats..*stats + ch].to_vec(),
                            self.stats[*stats + ch..*stats + 2 * ch].iter().map(|&v| T::one() / (v + T::of(*eps)).sqrt()).collect(),
                        ),
                    };
                    let mut dx = Tensor::zeros(n, x.shape);
                    for c in 0..ch {
                        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                        for i in 0..n {
                            let xs = &x.sample(i)[c * plane..(c + 1) * plane];
                            let ds = &dy.sample(i)[c * plane..(c + 1) * plane];
                            for (&xv, &dv) in xs.iter().zip(ds) {
                                sum_dy += dv;
                                sum_dy_xhat += dv * (xv - mean[c]) * inv[c];
                            }
                        }
                        grads[gamma + c] += sum_dy_xhat;
                        grads[beta + c] += sum_dy;
                        let g = self.params[gamma + c];
                        for i in 0..n {
                            let xs = &x.sample(i)[c * plane..(c + 1) * plane];
                            let ds = &dy.sample(i)[c * plane..(c + 1) * plane];
                            let out = &mut dx.sample_mut(i)[c * plane..(c + 1) * plane];
                            for ((o, &xv), &dv) in out.iter_mut().zip(xs).zip(ds) {
                                *o = if train.is_some() {
                                    let xhat = (xv - mean[c]) * inv[c];
                                    g * inv[c] / count * (count * dv - sum_dy - xhat * sum_dy_xhat)
                                } else {
                                    g * inv[c] * dv
                                };
                            }
                        }
                    }
                    accumulate(&mut dvals, step.ins[0], &self.steps, dx.data, n);
                }
            }
        }
        grads
    }
}

fn split_two<T>(v: &mut [T], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + alen <= b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}

fn accumulate<T: Real>(dvals: &mut [Option<Tensor<T>>], idx: usize, steps: &[Step], grad: Vec<T>, n: usize) {
    match &mut dvals[idx] {
        Some(t) => {
            for (d, v) in t.data.iter_mut().zip(grad) {
                *d += v;
            }
        }
        slot @ None => *slot = Some(Tensor { n, shape: steps[idx].shape, data: grad }),
    }
}

/// Per-channel mean and biased variance over batch and space.
fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let ch = x.shape.channels;
    let plane = x.shape.spatial();
    let count = T::of((x.n * plane) as f64);
    let mut mean = alloc::vec![T::zero(); ch];
    let mut var = alloc::vec![T::zero(); ch];
    for c in 0..ch {
        let mut s = T::zero();
        for i in 0..x.n {
            s += x.sample(i)[c * plane..(c + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
        }
        let m = s / count;
        let mut q = T::zero();
        for i in 0..x.n {
            q += x.sample(i)[c * plane..(c + 1) * plane].iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
        }
        mean[c] = m;
        var[c] = q / count;
    }
    (mean, var)
}
