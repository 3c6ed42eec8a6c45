//! Power-of-two fixed-point quantization: calibration, BatchNorm folding,
//! integer execution and the 8/16-bit feature-map selection.

mod exec;
mod mixed;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use exec::{QOutput, QuantizedNet};
pub use mixed::{select_mixed_precision, MixedOutcome, MixedStep, MixedTargets};

use crate::engine::{EngineError, Net};
use crate::graph::{BatchNorm, Graph, GraphError, NodeKind};
use crate::socsim::SimError;
use crate::taskbench::Sample;

/// Signed two's-complement fixed point with `frac_bits` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QSpec {
    pub bits: u8,
    pub frac_bits: u8,
}

impl QSpec {
    /// Most fractional bits that still represent `max_abs` (all of them for
    /// an all-zero tensor).
    pub fn for_range(bits: u8, max_abs: f64) -> QSpec {
        let top = ((1i64 << (bits - 1)) - 1) as f64;
        let frac = if max_abs > 0.0 && max_abs.is_finite() {
            libm::floor(libm::log2(top / max_abs)).clamp(0.0, (bits - 1) as f64) as u8
        } else {
            bits - 1
        };
        QSpec { bits, frac_bits: frac }
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.bits - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    pub fn step(&self) -> f64 {
        libm::ldexp(1.0, -(self.frac_bits as i32))
    }
}

/// Round-to-nearest-even of `x * 2^frac_bits`, saturated to the code range.
pub fn quantize(x: f64, q: QSpec) -> i64 {
    let scaled = libm::rint(libm::ldexp(x, q.frac_bits as i32));
    if scaled.is_nan() {
        return 0;
    }
    scaled.clamp(q.min_code() as f64, q.max_code() as f64) as i64
}

pub fn dequantize(code: i64, q: QSpec) -> f64 {
    libm::ldexp(code as f64, -(q.frac_bits as i32))
}

/// Max-abs of every feature map (by producing node name) and parameter
/// tensor (`"{node}.{role}"`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    pub max_abs: BTreeMap<String, f64>,
}

/// Fixed-point format of every tensor: parameters are always 16-bit,
/// feature maps default to 16-bit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QAssignment {
    pub weights: BTreeMap<String, QSpec>,
    pub feature_maps: BTreeMap<String, QSpec>,
}

impl QAssignment {
    /// Every parameter tensor at 16 bits, every feature map at `bits`.
    pub fn uniform(stats: &CalibStats, graph: &Graph, bits: u8) -> Result<QAssignment, QuantError> {
        let mut qa = QAssignment::default();
        for key in param_keys(graph) {
            let m = *stats.max_abs.get(&key).ok_or(QuantError::MissingStats(key.clone()))?;
            qa.weights.insert(key, QSpec::for_range(16, m));
        }
        for node in graph.nodes() {
            if matches!(node.kind, NodeKind::Head(_)) {
                continue;
            }
            let m = *stats.max_abs.get(&node.name).ok_or(QuantError::MissingStats(node.name.clone()))?;
            qa.feature_maps.insert(node.name.clone(), QSpec::for_range(bits, m));
        }
        Ok(qa)
    }

    /// Re-store one feature map at `bits`, keeping its calibrated range.
    pub fn set_feature_bits(&mut self, name: &str, bits: u8, stats: &CalibStats) -> Result<(), QuantError> {
        let m = *stats.max_abs.get(name).ok_or_else(|| QuantError::MissingStats(name.into()))?;
        let spec = self.feature_maps.get_mut(name).ok_or_else(|| QuantError::MissingSpec(name.into()))?;
        *spec = QSpec::for_range(bits, m);
        Ok(())
    }

    /// Storage width of a feature map in bits (16 when unassigned).
    pub fn feature_bits(&self, name: &str) -> u8 {
        self.feature_maps.get(name).map_or(16, |q| q.bits)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("calibration needs at least one sample")]
    EmptyCalibSet,
    #[error("no calibration statistics for {0}")]
    MissingStats(String),
    #[error("no fixed-point format assigned to {0}")]
    MissingSpec(String),
    #[error("targets not reachable with every feature map at 8 bits")]
    TargetUnreachable { best: alloc::boxed::Box<MixedOutcome> },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Names of the quantized parameter tensors of `graph`. Unfolded BatchNorms
/// run as a per-channel affine map with `scale` and `offset` tensors.
pub fn param_keys(graph: &Graph) -> Vec<String> {
    let mut keys = Vec::new();
    for n in graph.nodes() {
        let roles: &[&str] = match n.kind {
            NodeKind::Conv(_) | NodeKind::TransposedConv(_) => &["weight", "bias"],
            NodeKind::BatchNorm(_) => &["scale", "offset"],
            _ => &[],
        };
        keys.extend(roles.iter().map(|r| [n.name.as_str(), ".", r].concat()));
    }
    keys
}

/// Inference-mode BatchNorm as `y = scale * x + offset` per channel.
pub fn bn_affine(bn: &BatchNorm) -> (Vec<f32>, Vec<f32>) {
    let scale: Vec<f32> = (0..bn.channels()).map(|c| bn.gamma[c] / libm::sqrtf(bn.running_var[c] + bn.eps)).collect();
    let offset = (0..bn.channels()).map(|c| bn.beta[c] - bn.running_mean[c] * scale[c]).collect();
    (scale, offset)
}

/// Fold every BatchNorm that is the only consumer of a Conv or transposed
/// conv into that layer's weights and bias, and drop the BatchNorm node.
pub fn fold_batchnorm(graph: &Graph) -> Result<Graph, QuantError> {
    let mut g = graph.clone();
    loop {
        let target = g.nodes().iter().find_map(|n| {
            let NodeKind::BatchNorm(bn) = &n.kind else { return None };
            let p = *g.producers(n.id).first()?;
            let foldable = g.consumers(p).len() == 1
                && matches!(g.node(p)?.kind, NodeKind::Conv(_) | NodeKind::TransposedConv(_));
            foldable.then(|| (n.id, p, bn.clone()))
        });
        let Some((bn_id, conv_id, bn)) = target else { break };
        let (scale, offset) = bn_affine(&bn);
        let kind = match &g.node(conv_id).expect("producer").kind {
            NodeKind::Conv(c) => {
                let mut c = c.clone();
                let len = c.in_ch * c.kernel * c.kernel;
                for o in 0..c.out_ch {
                    c.weight[o * len..(o + 1) * len].iter_mut().for_each(|w| *w *= scale[o]);
                    c.bias[o] = c.bias[o] * scale[o] + offset[o];
                }
                NodeKind::Conv(c)
            }
            NodeKind::TransposedConv(t) => {
                let mut t = t.clone();
                let k2 = t.kernel * t.kernel;
                for i in 0..t.in_ch {
                    for o in 0..t.out_ch {
                        let at = (i * t.out_ch + o) * k2;
                        t.weight[at..at + k2].iter_mut().for_each(|w| *w *= scale[o]);
                    }
                }
                for o in 0..t.out_ch {
                    t.bias[o] = t.bias[o] * scale[o] + offset[o];
                }
                NodeKind::TransposedConv(t)
            }
            _ => unreachable!("only conv producers are folded"),
        };
        g = g.with_kind(conv_id, kind)?.bypass(bn_id)?;
    }
    Ok(g)
}

/// Float forward over `samples` recording the max-abs of every feature map
/// and parameter tensor.
pub fn calibrate(graph: &Graph, samples: &[Sample]) -> Result<CalibStats, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptyCalibSet);
    }
    let net: Net<f32> = Net::compile(graph)?;
    let max_abs = |v: &[f32]| v.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
    let mut stats = CalibStats::default();
    for n in graph.nodes() {
        let named = |role: &str| [n.name.as_str(), ".", role].concat();
        match &n.kind {
            NodeKind::Conv(c) => {
                stats.max_abs.insert(named("weight"), max_abs(&c.weight));
                stats.max_abs.insert(named("bias"), max_abs(&c.bias));
            }
            NodeKind::TransposedConv(t) => {
                stats.max_abs.insert(named("weight"), max_abs(&t.weight));
                stats.max_abs.insert(named("bias"), max_abs(&t.bias));
            }
            NodeKind::BatchNorm(bn) => {
                let (scale, offset) = bn_affine(bn);
                stats.max_abs.insert(named("scale"), max_abs(&scale));
                stats.max_abs.insert(named("offset"), max_abs(&offset));
            }
            _ => {}
        }
    }
    for chunk in samples.chunks(16) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        for (id, t) in net.activations(&batch)? {
            let name = &graph.node(id).expect("known node").name;
            let m = max_abs(&t.data);
            let e = stats.max_abs.entry(name.clone()).or_insert(0.0);
            *e = e.max(m);
        }
    }
    Ok(stats)
}

/// Signal-to-quantization-noise ratio in dB (infinite for an exact match).
pub fn sqnr_db(reference: &[f32], test: &[f32]) -> f64 {
    let (mut signal, mut noise) = (0.0f64, 0.0f64);
    for (&r, &t) in reference.iter().zip(test) {
        signal += (r as f64) * (r as f64);
        noise += (r as f64 - t as f64) * (r as f64 - t as f64);
    }
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(signal / noise)
    }
}
