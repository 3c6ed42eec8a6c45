//! Float execution, loss and training.
//!
//! Graphs are compiled into a [`Net`] holding a flat parameter vector in the
//! chosen scalar type. Training runs in `f32`; `f64` nets back the
//! finite-difference gradient oracle.

mod gemm;
mod loss;
mod net;
mod ops;
mod train;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

pub use gemm::{dot, gemm_nn, gemm_nt, gemm_tn};
pub use loss::{argmax_channels, loss, loss_and_grad, LossValue, LossWeights};
pub use net::{HeadOutputs, Mode, Net, ParamEntry, ParamRole, Tape, Tensor};
pub use ops::Geom;
pub use train::{evaluate, train, Adam, EpochRecord, History, TrainConfig};

use crate::graph::{GraphError, NodeId, Task, TensorShape, Violation};
use crate::taskbench::Sample;
use crate::Graph;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid graph: {0}")]
    InvalidGraph(Violation),
    #[error("input {node} has {channels} channels; expected 1 (Y) or 2 (UV)")]
    UnsupportedInput { node: NodeId, channels: usize },
    #[error("sample does not match input {node} of shape {expected} ({found} values)")]
    ShapeMismatch { node: NodeId, expected: TensorShape, found: usize },
    #[error("{task:?} labels have {found} cells but the head produces {expected}")]
    LabelMismatch { task: Task, expected: usize, found: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Inference-mode forward pass of one sample: head output (CHW) per task.
pub fn forward(graph: &Graph, sample: &Sample) -> Result<BTreeMap<Task, Vec<f32>>, EngineError> {
    let net: Net<f32> = Net::compile(graph)?;
    let outs = net.predict(&[sample])?;
    Ok(outs.into_iter().map(|(t, v)| (t, v.data)).collect())
}

/// Parameter gradients of the weighted loss on one batch, BatchNorm in
/// training mode, keyed by `"{node}.{role}"`.
pub fn backward(graph: &Graph, batch: &[&Sample], weights: &LossWeights) -> Result<BTreeMap<alloc::string::String, Vec<f32>>, EngineError> {
    let net: Net<f32> = Net::compile(graph)?;
    let tape = net.forward(batch, Mode::Train)?;
    let (_, head_grads) = loss_and_grad(&tape.heads(&net), batch, weights);
    let grads = net.backward(&tape, &head_grads);
    Ok(net.layout().iter().map(|e| (e.key(), grads[e.offset..e.offset + e.len].to_vec())).collect())
}
