//! On-disk formats: the graph definition (JSON) and its weights sidecar
//! (`ENF1` binary).
//!
//! Weights binary layout, all little-endian:
//!
//! ```text
//! "ENF1" | u32 count | count x (u32 name_len | name | u32 rank | rank x u32 dim | u64 offset) | f32 data...
//! ```
//!
//! `offset` is the absolute byte position of the tensor's first value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use enf_core::graph::{BatchNorm, Conv, Edge, Node, TransposedConv};
use enf_core::{Graph, NodeId, NodeKind, Task, TensorShape};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const MAGIC: &[u8; 4] = b"ENF1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpDef {
    Input { shape: TensorShape },
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize, eps: f32 },
    Relu,
    TransposedConv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    Concat,
    Add,
    Head { task: Task },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub id: NodeId,
    pub name: String,
    #[serde(flatten)]
    pub op: OpDef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadDef {
    pub node: NodeId,
    pub task: Task,
}

/// Graph definition file. Parameters live in the sidecar under
/// `<node name>.<role>` keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<NodeDef>,
    pub edges: Vec<Edge>,
    pub inputs: Vec<NodeId>,
    pub heads: Vec<HeadDef>,
    /// Weights file name, relative to the graph file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

/// A named tensor of the weights sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

pub type WeightMap = BTreeMap<String, NamedTensor>;

fn tensor(dims: &[usize], data: &[f32]) -> NamedTensor {
    NamedTensor { dims: dims.iter().map(|&d| d as u32).collect(), data: data.to_vec() }
}

/// Split a graph into its definition and parameter tensors.
pub fn split_graph(graph: &Graph) -> (GraphFile, WeightMap) {
    let mut weights = WeightMap::new();
    let mut put = |node: &str, role: &str, t: NamedTensor| {
        weights.insert(format!("{node}.{role}"), t);
    };
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| {
            let op = match &n.kind {
                NodeKind::Input(shape) => OpDef::Input { shape: *shape },
                NodeKind::Conv(c) => {
                    put(&n.name, "weight", tensor(&[c.out_ch, c.in_ch, c.kernel, c.kernel], &c.weight));
                    put(&n.name, "bias", tensor(&[c.out_ch], &c.bias));
                    OpDef::Conv { in_ch: c.in_ch, out_ch: c.out_ch, kernel: c.kernel, stride: c.stride, padding: c.padding }
                }
                NodeKind::TransposedConv(t) => {
                    put(&n.name, "weight", tensor(&[t.in_ch, t.out_ch, t.kernel, t.kernel], &t.weight));
                    put(&n.name, "bias", tensor(&[t.out_ch], &t.bias));
                    OpDef::TransposedConv {
                        in_ch: t.in_ch,
                        out_ch: t.out_ch,
                        kernel: t.kernel,
                        stride: t.stride,
                        padding: t.padding,
                    }
                }
                NodeKind::BatchNorm(bn) => {
                    let c = bn.channels();
                    put(&n.name, "gamma", tensor(&[c], &bn.gamma));
                    put(&n.name, "beta", tensor(&[c], &bn.beta));
                    put(&n.name, "running_mean", tensor(&[c], &bn.running_mean));
                    put(&n.name, "running_var", tensor(&[c], &bn.running_var));
                    OpDef::BatchNorm { channels: c, eps: bn.eps }
                }
                NodeKind::Relu => OpDef::Relu,
                NodeKind::Concat => OpDef::Concat,
                NodeKind::Add => OpDef::Add,
                NodeKind::Head(task) => OpDef::Head { task: *task },
            };
            NodeDef { id: n.id, name: n.name.clone(), op }
        })
        .collect();
    let file = GraphFile {
        nodes,
        edges: graph.edges().to_vec(),
        inputs: graph.inputs(),
        heads: graph.heads().into_iter().map(|(node, task)| HeadDef { node, task }).collect(),
        weights: None,
    };
    (file, weights)
}

fn take(weights: &mut WeightMap, node: &str, role: &str, len: usize) -> Result<Vec<f32>, CliError> {
    let key = format!("{node}.{role}");
    let t = weights.remove(&key).ok_or_else(|| CliError::Format(format!("weights file has no tensor {key}")))?;
    if t.data.len() != len {
        return Err(CliError::Format(format!("{key} has {} values, expected {len}", t.data.len())));
    }
    Ok(t.data)
}

/// Rebuild and validate a graph. With `weights == None` every parameter is
/// zero (identity BatchNorm).
pub fn join_graph(file: &GraphFile, weights: Option<WeightMap>) -> Result<Graph, CliError> {
    let mut w = weights.clone().unwrap_or_default();
    let have = weights.is_some();
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for d in &file.nodes {
        let kind = match d.op {
            OpDef::Input { shape } => NodeKind::Input(shape),
            OpDef::Conv { in_ch, out_ch, kernel, stride, padding } => {
                let mut c = Conv::zeros(in_ch, out_ch, kernel, stride, padding);
                if have {
                    c.weight = take(&mut w, &d.name, "weight", c.weight.len())?;
                    c.bias = take(&mut w, &d.name, "bias", out_ch)?;
                }
                NodeKind::Conv(c)
            }
            OpDef::TransposedConv { in_ch, out_ch, kernel, stride, padding } => {
                let mut t = TransposedConv::zeros(in_ch, out_ch, kernel, stride, padding);
                if have {
                    t.weight = take(&mut w, &d.name, "weight", t.weight.len())?;
                    t.bias = take(&mut w, &d.name, "bias", out_ch)?;
                }
                NodeKind::TransposedConv(t)
            }
            OpDef::BatchNorm { channels, eps } => {
                let mut bn = BatchNorm { eps, ..BatchNorm::identity(channels) };
                if have {
                    bn.gamma = take(&mut w, &d.name, "gamma", channels)?;
                    bn.beta = take(&mut w, &d.name, "beta", channels)?;
                    bn.running_mean = take(&mut w, &d.name, "running_mean", channels)?;
                    bn.running_var = take(&mut w, &d.name, "running_var", channels)?;
                }
                NodeKind::BatchNorm(bn)
            }
            OpDef::Relu => NodeKind::Relu,
            OpDef::Concat => NodeKind::Concat,
            OpDef::Add => NodeKind::Add,
            OpDef::Head { task } => NodeKind::Head(task),
        };
        nodes.push(Node { id: d.id, name: d.name.clone(), kind });
    }
    if let Some(extra) = w.keys().next() {
        return Err(CliError::Format(format!("weights file has unused tensor {extra}")));
    }
    let graph = Graph::checked(nodes, file.edges.clone()).map_err(|e| CliError::InvalidGraph(e.to_string()))?;
    let heads: Vec<_> = file.heads.iter().map(|h| (h.node, h.task)).collect();
    if graph.inputs() != file.inputs || graph.heads() != heads {
        return Err(CliError::InvalidGraph("inputs/heads lists disagree with the nodes".into()));
    }
    Ok(graph)
}

pub fn encode_weights(weights: &WeightMap) -> Vec<u8> {
    let header: usize = 8 + weights.iter().map(|(k, t)| 4 + k.len() + 4 + 4 * t.dims.len() + 8).sum::<usize>();
    let mut out = Vec::with_capacity(header + 4 * weights.values().map(|t| t.data.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    let mut offset = header as u64;
    for (name, t) in weights {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.data.len() as u64;
    }
    for t in weights.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CliError::Format(format!("weights file truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<WeightMap, CliError> {
    let mut r = Reader { buf, at: 0 };
    if r.bytes(4)? != MAGIC {
        return Err(CliError::Format("weights file does not start with ENF1".into()));
    }
    let count = r.u32()?;
    let mut out = WeightMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| CliError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let offset = r.u64()? as usize;
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut data_reader = Reader { buf, at: offset };
        let data = data_reader
            .bytes(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if out.insert(name.clone(), NamedTensor { dims, data }).is_some() {
            return Err(CliError::Format(format!("duplicate tensor {name}")));
        }
    }
    Ok(out)
}

/// Write `<dir>/<stem>.json` and `<dir>/<stem>.enf`.
pub fn save_model(graph: &Graph, dir: &Path, stem: &str) -> Result<(), CliError> {
    let (mut file, weights) = split_graph(graph);
    let weights_name = format!("{stem}.enf");
    file.weights = Some(weights_name.clone());
    crate::write_json(&dir.join(format!("{stem}.json")), &file)?;
    crate::write_bytes(&dir.join(weights_name), &encode_weights(&weights))
}

/// Load a graph file and, if it names one, its weights sidecar.
pub fn load_model(path: &Path) -> Result<Graph, CliError> {
    let file: GraphFile = crate::read_json(path)?;
    let weights = match &file.weights {
        Some(name) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(name);
            Some(decode_weights(&fs::read(&p).map_err(|e| CliError::io(&p, e))?)?)
        }
        None => None,
    };
    join_graph(&file, weights)
}
