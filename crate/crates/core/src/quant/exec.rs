use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{bn_affine, dequantize, quantize, QAssignment, QSpec, QuantError};
use crate::engine::EngineError;
use crate::graph::{Graph, NodeId, NodeKind, Task, TensorShape};
use crate::taskbench::{MetricsReport, Sample, TaskEvaluator};

#[derive(Clone, Debug)]
enum QOp {
    Input { uv: bool },
    Conv { k: usize, s: usize, p: usize, w: Vec<i64>, bias: Vec<i64>, shift: i32 },
    TConv { k: usize, s: usize, p: usize, w: Vec<i64>, bias: Vec<i64>, shift: i32 },
    Affine { scale: Vec<i64>, offset: Vec<i64>, shift: i32 },
    Relu,
    Concat,
    Add,
    Head(Task),
}

#[derive(Clone, Debug)]
struct QStep {
    name: String,
    op: QOp,
    ins: Vec<usize>,
    shape: TensorShape,
    out: QSpec,
}

/// A graph lowered to integer arithmetic under one [`QAssignment`].
#[derive(Clone, Debug)]
pub struct QuantizedNet {
    steps: Vec<QStep>,
    image_size: usize,
}

/// Dequantized head outputs plus, per feature map, how many values hit the
/// code range limits.
#[derive(Clone, Debug, PartialEq)]
pub struct QOutput {
    pub heads: BTreeMap<Task, Vec<f32>>,
    pub saturated: BTreeMap<String, u64>,
}

/// `acc * 2^-shift` with round-half-up when shifting right.
fn rescale(acc: i64, shift: i32) -> i64 {
    if shift > 0 {
        (acc + (1i64 << (shift - 1))) >> shift
    } else {
        acc << -shift
    }
}

fn saturate(v: i64, q: QSpec, count: &mut u64) -> i64 {
    if v < q.min_code() || v > q.max_code() {
        *count += 1;
        v.clamp(q.min_code(), q.max_code())
    } else {
        v
    }
}

impl QuantizedNet {
    pub fn compile(graph: &Graph, qa: &QAssignment) -> Result<Self, QuantError> {
        if let Some(v) = graph.validate().first() {
            return Err(EngineError::InvalidGraph(v.clone()).into());
        }
        let shapes = graph.infer_shapes()?;
        let order = graph.topo_order()?;
        let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut steps: Vec<QStep> = Vec::with_capacity(order.len());
        let mut image_size = 0;
        for &id in &order {
            let node = graph.node(id).expect("known node");
            let ins: Vec<usize> = graph.producers(id).iter().map(|p| pos[p]).collect();
            let in_spec = ins.first().map(|&i| steps[i].out);
            let fm = |name: &str| qa.feature_maps.get(name).copied().ok_or_else(|| QuantError::MissingSpec(name.into()));
            let param = |role: &str| {
                let key = [node.name.as_str(), ".", role].concat();
                qa.weights.get(&key).copied().ok_or(QuantError::MissingSpec(key))
            };
            let codes = |v: &[f32], q: QSpec| v.iter().map(|&x| quantize(x as f64, q)).collect::<Vec<_>>();
            // Bias codes moved to the accumulator's fractional position.
            let align = |v: &[f32], q: QSpec, acc_frac: i32| -> Vec<i64> {
                v.iter().map(|&x| rescale(quantize(x as f64, q), q.frac_bits as i32 - acc_frac)).collect()
            };
            let (op, out) = match &node.kind {
                NodeKind::Input(s) => {
                    let uv = match s.channels {
                        1 => false,
                        2 => true,
                        c => return Err(EngineError::UnsupportedInput { node: id, channels: c }.into()),
                    };
                    image_size = if uv { 2 * s.height } else { s.height };
                    (QOp::Input { uv }, fm(&node.name)?)
                }
                NodeKind::Conv(c) => {
                    let (qw, qb, out) = (param("weight")?, param("bias")?, fm(&node.name)?);
                    let acc = (qw.frac_bits + in_spec.expect("conv input").frac_bits) as i32;
                    let op = QOp::Conv {
                        k: c.kernel,
                        s: c.stride,
                        p: c.padding,
                        w: codes(&c.weight, qw),
                        bias: align(&c.bias, qb, acc),
                        shift: acc - out.frac_bits as i32,
                    };
                    (op, out)
                }
                NodeKind::TransposedConv(t) => {
                    let (qw, qb, out) = (param("weight")?, param("bias")?, fm(&node.name)?);
                    let acc = (qw.frac_bits + in_spec.expect("tconv input").frac_bits) as i32;
                    let op = QOp::TConv {
                        k: t.kernel,
                        s: t.stride,
                        p: t.padding,
                        w: codes(&t.weight, qw),
                        bias: align(&t.bias, qb, acc),
                        shift: acc - out.frac_bits as i32,
                    };
                    (op, out)
                }
                NodeKind::BatchNorm(bn) => {
                    let (qs, qo, out) = (param("scale")?, param("offset")?, fm(&node.name)?);
                    let (scale, offset) = bn_affine(bn);
                    let acc = (qs.frac_bits + in_spec.expect("bn input").frac_bits) as i32;
                    let op = QOp::Affine { scale: codes(&scale, qs), offset: align(&offset, qo, acc), shift: acc - out.frac_bits as i32 };
                    (op, out)
                }
                NodeKind::Relu => (QOp::Relu, fm(&node.name)?),
                NodeKind::Concat => (QOp::Concat, fm(&node.name)?),
                NodeKind::Add => (QOp::Add, fm(&node.name)?),
                NodeKind::Head(t) => (QOp::Head(*t), in_spec.expect("head input")),
            };
            steps.push(QStep { name: node.name.clone(), op, ins, shape: shapes[&id], out });
        }
        Ok(QuantizedNet { steps, image_size })
    }

    pub fn heads(&self) -> Vec<(Task, TensorShape)> {
        self.steps
            .iter()
            .filter_map(|s| match s.op {
                QOp::Head(t) => Some((t, s.shape)),
                _ => None,
            })
            .collect()
    }

    pub fn forward(&self, sample: &Sample) -> Result<QOutput, QuantError> {
        let mut values: Vec<Vec<i64>> = Vec::with_capacity(self.steps.len());
        let mut saturated = BTreeMap::new();
        let mut heads = BTreeMap::new();
        for step in &self.steps {
            let mut sat = 0u64;
            let q = step.out;
            let spec_of = |i: usize| self.steps[step.ins[i]].out;
            let out: Vec<i64> = match &step.op {
                QOp::Input { uv } => {
                    let src = if *uv { &sample.uv } else { &sample.y };
                    if src.len() != step.shape.elements() {
                        return Err(EngineError::ShapeMismatch { node: NodeId(0), expected: step.shape, found: src.len() }.into());
                    }
                    src.iter()
                        .map(|&x| {
                            let v = quantize(x as f64, q);
                            if v == q.min_code() || v == q.max_code() {
                                let exact = libm::ldexp(x as f64, q.frac_bits as i32);
                                if exact < q.min_code() as f64 || exact > q.max_code() as f64 {
                                    sat += 1;
                                }
                            }
                            v
                        })
                        .collect()
                }
                QOp::Conv { k, s, p, w, bias, shift } => {
                    let x = &values[step.ins[0]];
                    let xs = self.steps[step.ins[0]].shape;
                    let acc = conv_acc(x, xs, step.shape, *k, *s, *p, w, bias);
                    acc.into_iter().map(|a| saturate(rescale(a, *shift), q, &mut sat)).collect()
                }
                QOp::TConv { k, s, p, w, bias, shift } => {
                    let x = &values[step.ins[0]];
                    let xs = self.steps[step.ins[0]].shape;
                    let acc = tconv_acc(x, xs, step.shape, *k, *s, *p, w, bias);
                    acc.into_iter().map(|a| saturate(rescale(a, *shift), q, &mut sat)).collect()
                }
                QOp::Affine { scale, offset, shift } => {
                    let x = &values[step.ins[0]];
                    let plane = step.shape.spatial();
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let c = i / plane;
                            saturate(rescale(v * scale[c] + offset[c], *shift), q, &mut sat)
                        })
                        .collect()
                }
                QOp::Relu => {
                    let shift = spec_of(0).frac_bits as i32 - q.frac_bits as i32;
                    values[step.ins[0]].iter().map(|&v| saturate(rescale(v.max(0), shift), q, &mut sat)).collect()
                }
                QOp::Concat => {
                    let mut out = Vec::with_capacity(step.shape.elements());
                    for (i, &src) in step.ins.iter().enumerate() {
                        let shift = spec_of(i).frac_bits as i32 - q.frac_bits as i32;
                        out.extend(values[src].iter().map(|&v| saturate(rescale(v, shift), q, &mut sat)));
                    }
                    out
                }
                QOp::Add => {
                    let acc_frac = (0..step.ins.len()).map(|i| spec_of(i).frac_bits).max().expect("add inputs") as i32;
                    let mut acc = alloc::vec![0i64; step.shape.elements()];
                    for (i, &src) in step.ins.iter().enumerate() {
                        let up = acc_frac - spec_of(i).frac_bits as i32;
                        for (a, &v) in acc.iter_mut().zip(&values[src]) {
                            *a += v << up;
                        }
                    }
                    let shift = acc_frac - q.frac_bits as i32;
                    acc.into_iter().map(|a| saturate(rescale(a, shift), q, &mut sat)).collect()
                }
                QOp::Head(t) => {
                    let v = values[step.ins[0]].clone();
                    heads.insert(*t, v.iter().map(|&c| dequantize(c, q) as f32).collect());
                    v
                }
            };
            if !matches!(step.op, QOp::Head(_)) {
                saturated.insert(step.name.clone(), sat);
            }
            values.push(out);
        }
        Ok(QOutput { heads, saturated })
    }

    /// Task metrics of the integer network over `samples`, with summed
    /// saturation counts.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<(MetricsReport, BTreeMap<String, u64>), QuantError> {
        let mut eval = TaskEvaluator::new(&self.heads(), self.image_size);
        let mut saturated: BTreeMap<String, u64> = BTreeMap::new();
        for s in samples {
            let out = self.forward(s)?;
            eval.add(s, |t| out.heads[&t].as_slice());
            for (k, v) in out.saturated {
                *saturated.entry(k).or_default() += v;
            }
        }
        Ok((eval.finish(), saturated))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_acc(x: &[i64], xs: TensorShape, ys: TensorShape, k: usize, s: usize, p: usize, w: &[i64], bias: &[i64]) -> Vec<i64> {
    let (h, wd, oh, ow) = (xs.height as isize, xs.width as isize, ys.height, ys.width);
    let mut acc = alloc::vec![0i64; ys.elements()];
    for o in 0..ys.channels {
        let out = &mut acc[o * oh * ow..(o + 1) * oh * ow];
        out.iter_mut().for_each(|a| *a = bias[o]);
        for c in 0..xs.channels {
            let plane = &x[c * xs.spatial()..(c + 1) * xs.spatial()];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * xs.channels + c) * k + ky) * k + kx];
                    if wv == 0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let row = &plane[iy as usize * xs.width..(iy as usize + 1) * xs.width];
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        for (ox, a) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < wd {
                                *a += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    acc
}

#[allow(clippy::too_many_arguments)]
fn tconv_acc(x: &[i64], xs: TensorShape, ys: TensorShape, k: usize, s: usize, p: usize, w: &[i64], bias: &[i64]) -> Vec<i64> {
    let (oh, ow) = (ys.height as isize, ys.width as isize);
    let mut acc = alloc::vec![0i64; ys.elements()];
    for o in 0..ys.channels {
        acc[o * ys.spatial()..(o + 1) * ys.spatial()].iter_mut().for_each(|a| *a = bias[o]);
    }
    for i in 0..xs.channels {
        let plane = &x[i * xs.spatial()..(i + 1) * xs.spatial()];
        for o in 0..ys.channels {
            let out = &mut acc[o * ys.spatial()..(o + 1) * ys.spatial()];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((i * ys.channels + o) * k + ky) * k + kx];
                    if wv == 0 {
                        continue;
                    }
                    for iy in 0..xs.height {
                        let y = (iy * s + ky) as isize - p as isize;
                        if y < 0 || y >= oh {
                            continue;
                        }
                        for ix in 0..xs.width {
                            let xo = (ix * s + kx) as isize - p as isize;
                            if xo >= 0 && xo < ow {
                                out[y as usize * ys.width + xo as usize] += wv * plane[iy * xs.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    acc
}
