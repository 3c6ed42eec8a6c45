use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{core_cycles, ExecMode, ExecNode, HardwareConfig, Memory, RowSpan, Schedule, ScheduleMode, SimError, Tile, Transfer};
use crate::graph::{Graph, GraphError, NodeId, NodeKind, TensorShape};
use crate::quant::QAssignment;

/// On-chip buffers hold 16-bit values regardless of DDR storage width.
const CORE_BITS: u8 = 16;
/// Parameters are always stored at 16 bits.
const WEIGHT_BYTES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StageKind {
    Conv { kernel: usize, stride: usize, padding: usize, in_ch: usize, out_ch: usize },
    /// Costed as a stride-1 convolution over the upsampled grid.
    TransposedConv { kernel: usize, stride: usize, padding: usize, in_ch: usize, out_ch: usize },
    /// Add, or a BatchNorm / ReLU not fused into a convolution.
    Elementwise { channels: usize },
}

/// A core operation with its fused BatchNorm / ReLU tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub nodes: Vec<NodeId>,
    /// Name of the last node; the stage output is stored under this name.
    pub name: String,
    pub kind: StageKind,
    pub out: TensorShape,
    /// DDR feature maps read (Concat inputs are read in place).
    pub inputs: Vec<(String, TensorShape)>,
    pub weight_elems: u64,
    pub consumers: Vec<usize>,
    pub feeds_head: bool,
}

impl Stage {
    fn blocks(&self, hw: &HardwareConfig) -> usize {
        match self.kind {
            StageKind::Conv { in_ch, out_ch, .. } | StageKind::TransposedConv { in_ch, out_ch, .. } => {
                in_ch.div_ceil(hw.core.par_in) * out_ch.div_ceil(hw.core.par_out)
            }
            StageKind::Elementwise { channels } => channels.div_ceil(hw.core.par_out),
        }
    }

    /// Cycles to produce `rows` output rows.
    fn cycles(&self, hw: &HardwareConfig, rows: usize) -> u64 {
        match self.kind {
            StageKind::Conv { in_ch, out_ch, .. } | StageKind::TransposedConv { in_ch, out_ch, .. } => {
                core_cycles(hw, in_ch, out_ch, rows, self.out.width)
            }
            StageKind::Elementwise { channels } => (rows * self.out.width * channels.div_ceil(hw.core.par_out)) as u64,
        }
    }

    pub fn is_convolution(&self) -> bool {
        !matches!(self.kind, StageKind::Elementwise { .. })
    }

    /// Input rows needed to produce output rows `span`.
    fn rows_needed(&self, span: RowSpan) -> RowSpan {
        let in_h = self.inputs[0].1.height as isize;
        let (a, b) = (span.start as isize, (span.start + span.n) as isize);
        let (lo, hi) = match self.kind {
            StageKind::Conv { kernel, stride, padding, .. } => {
                let (k, s, p) = (kernel as isize, stride as isize, padding as isize);
                (a * s - p, (b - 1) * s - p + k)
            }
            StageKind::TransposedConv { kernel, stride, padding, .. } => {
                let (k, s, p) = (kernel as isize, stride as isize, padding as isize);
                ((a + p - k + 1).div_euclid(s) + ((a + p - k + 1).rem_euclid(s) != 0) as isize, (b - 1 + p).div_euclid(s) + 1)
            }
            StageKind::Elementwise { .. } => (a, b),
        };
        let (lo, hi) = (lo.clamp(0, in_h), hi.clamp(0, in_h));
        RowSpan { start: lo as usize, n: (hi - lo).max(0) as usize }
    }
}

fn bytes_of(shape: TensorShape, rows: usize, bits: u8) -> u64 {
    (rows * shape.width * shape.channels) as u64 * bits as u64 / 8
}

/// Group the graph into stages, in topological order.
pub(crate) fn stages(graph: &Graph) -> Result<(Vec<Stage>, Vec<(String, TensorShape)>, Vec<String>), GraphError> {
    let shapes = graph.infer_shapes()?;
    let order = graph.topo_order()?;
    let mut absorbed: BTreeMap<NodeId, ()> = BTreeMap::new();
    let mut tensors: BTreeMap<NodeId, Vec<(String, TensorShape)>> = BTreeMap::new();
    let mut stage_of_tensor: BTreeMap<String, usize> = BTreeMap::new();
    let mut stages: Vec<Stage> = Vec::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();

    for &id in &order {
        if absorbed.contains_key(&id) {
            continue;
        }
        let node = graph.node(id).expect("known node");
        let producers = graph.producers(id);
        let read = |tensors: &BTreeMap<NodeId, Vec<(String, TensorShape)>>| -> Vec<(String, TensorShape)> {
            producers.iter().flat_map(|p| tensors[p].clone()).collect()
        };
        let (kind, weight_elems) = match &node.kind {
            NodeKind::Input(_) => {
                inputs.push((node.name.clone(), shapes[&id]));
                tensors.insert(id, alloc::vec![(node.name.clone(), shapes[&id])]);
                continue;
            }
            NodeKind::Concat => {
                let t = read(&tensors);
                tensors.insert(id, t);
                continue;
            }
            NodeKind::Head(_) => {
                for (name, _) in &tensors[&producers[0]] {
                    if let Some(&s) = stage_of_tensor.get(name) {
                        stages[s].feeds_head = true;
                    }
                    if !outputs.contains(name) {
                        outputs.push(name.clone());
                    }
                }
                continue;
            }
            NodeKind::Conv(c) => (
                StageKind::Conv { kernel: c.kernel, stride: c.stride, padding: c.padding, in_ch: c.in_ch, out_ch: c.out_ch },
                (c.weight.len() + c.bias.len()) as u64,
            ),
            NodeKind::TransposedConv(t) => (
                StageKind::TransposedConv { kernel: t.kernel, stride: t.stride, padding: t.padding, in_ch: t.in_ch, out_ch: t.out_ch },
                (t.weight.len() + t.bias.len()) as u64,
            ),
            NodeKind::BatchNorm(bn) => (StageKind::Elementwise { channels: bn.channels() }, 2 * bn.channels() as u64),
            NodeKind::Relu | NodeKind::Add => (StageKind::Elementwise { channels: shapes[&id].channels }, 0),
        };
        let mut nodes = alloc::vec![id];
        let mut weight_elems = weight_elems;
        let conv_like = matches!(kind, StageKind::Conv { .. } | StageKind::TransposedConv { .. });
        let mut has_bn = matches!(node.kind, NodeKind::BatchNorm(_));
        let mut has_relu = matches!(node.kind, NodeKind::Relu);
        loop {
            let last = *nodes.last().expect("non-empty");
            let consumers = graph.consumers(last);
            let [next] = consumers.as_slice() else { break };
            match &graph.node(*next).expect("known node").kind {
                NodeKind::BatchNorm(bn) if conv_like && !has_bn && !has_relu => {
                    has_bn = true;
                    weight_elems += 2 * bn.channels() as u64;
                }
                NodeKind::Relu if !has_relu => has_relu = true,
                _ => break,
            }
            nodes.push(*next);
            absorbed.insert(*next, ());
        }
        let last = *nodes.last().expect("non-empty");
        let name = graph.node(last).expect("known node").name.clone();
        let idx = stages.len();
        let stage_inputs = read(&tensors);
        for (t, _) in &stage_inputs {
            if let Some(&s) = stage_of_tensor.get(t) {
                if !stages[s].consumers.contains(&idx) {
                    stages[s].consumers.push(idx);
                }
            }
        }
        stage_of_tensor.insert(name.clone(), idx);
        tensors.insert(last, alloc::vec![(name.clone(), shapes[&last])]);
        stages.push(Stage {
            nodes,
            name,
            kind,
            out: shapes[&last],
            inputs: stage_inputs,
            weight_elems,
            consumers: Vec::new(),
            feeds_head: false,
        });
    }
    Ok((stages, inputs, outputs))
}

struct Costed {
    node: ExecNode,
    ddr_bytes: u64,
}

fn horizontal(stage: &Stage, hw: &HardwareConfig, qa: &QAssignment) -> Result<Costed, SimError> {
    let out_rows = RowSpan { start: 0, n: stage.out.height };
    let mut transfers = Vec::new();
    for (name, shape) in &stage.inputs {
        transfers.push(Transfer { src: Memory::Ddr, dst: Memory::Sdram, bytes: bytes_of(*shape, shape.height, qa.feature_bits(name)), tensor: name.clone() });
    }
    if stage.weight_elems > 0 {
        let key = [stage.name.as_str(), ".weight"].concat();
        transfers.push(Transfer { src: Memory::Ddr, dst: Memory::Local, bytes: stage.weight_elems * WEIGHT_BYTES, tensor: key });
    }
    transfers.push(Transfer { src: Memory::Sdram, dst: Memory::Ddr, bytes: bytes_of(stage.out, stage.out.height, qa.feature_bits(&stage.name)), tensor: stage.name.clone() });

    // smallest workable slice: the input rows behind one output row
    let one = stage.rows_needed(RowSpan { start: 0, n: 1 });
    let needed = stage.inputs.iter().map(|(_, s)| bytes_of(*s, one.n, CORE_BITS)).sum::<u64>()
        + bytes_of(stage.out, 1, CORE_BITS)
        + stage.weight_elems * WEIGHT_BYTES;
    let available = hw.sdram_bytes + hw.local_bytes;
    if needed > available {
        return Err(SimError::Infeasible { node: stage.nodes[0], needed, available });
    }
    let cycles = stage.cycles(hw, stage.out.height);
    let ddr_bytes = transfers.iter().map(|t| t.bytes).sum();
    let in_span = stage.rows_needed(out_rows);
    Ok(Costed {
        node: ExecNode {
            mode: ExecMode::Horizontal,
            chain: stage.nodes.clone(),
            name: stage.name.clone(),
            tiles: alloc::vec![Tile { rows: alloc::vec![in_span, out_rows], channel_blocks: alloc::vec![stage.blocks(hw)] }],
            transfers,
            cycles,
            ideal_cycles: cycles,
            core_runs: stage.blocks(hw) as u64,
            reads: stage.inputs.iter().map(|(n, _)| n.clone()).collect(),
            writes: Some(stage.name.clone()),
        },
        ddr_bytes,
    })
}

/// Row bands of height `band` through `chain`; per tile, the row span of the
/// chain input and of every stage output.
fn band_tiles(chain: &[&Stage], band: usize) -> Vec<Vec<RowSpan>> {
    let last = chain.last().expect("non-empty chain");
    let h = last.out.height;
    let mut tiles = Vec::new();
    let mut a = 0;
    while a < h {
        let mut spans = alloc::vec![RowSpan { start: 0, n: 0 }; chain.len() + 1];
        spans[chain.len()] = RowSpan { start: a, n: band.min(h - a) };
        for l in (0..chain.len()).rev() {
            spans[l] = chain[l].rows_needed(spans[l + 1]);
        }
        tiles.push(spans);
        a += band;
    }
    tiles
}

fn working_set(chain: &[&Stage], spans: &[RowSpan]) -> u64 {
    let first = chain[0];
    let input: u64 = first.inputs.iter().map(|(_, s)| bytes_of(*s, spans[0].n, CORE_BITS)).sum();
    let outputs: u64 = chain.iter().zip(&spans[1..]).map(|(s, r)| bytes_of(s.out, r.n, CORE_BITS)).sum();
    let weights: u64 = chain.iter().map(|s| s.weight_elems * WEIGHT_BYTES).sum();
    input + outputs + weights
}

/// Vertical execution of a chain with the tallest band that fits SDRAM, or
/// `None` if even one-row bands do not.
fn vertical(chain: &[&Stage], hw: &HardwareConfig, qa: &QAssignment) -> Option<Costed> {
    let h = chain.last().expect("non-empty chain").out.height;
    let fits = |band: usize| band_tiles(chain, band).iter().all(|t| working_set(chain, t) <= hw.sdram_bytes);
    if !fits(1) {
        return None;
    }
    let (mut lo, mut hi) = (1, h);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let tiles = band_tiles(chain, lo);
    let first = chain[0];
    let last = chain[chain.len() - 1];
    let weight_bytes: u64 = chain.iter().map(|s| s.weight_elems * WEIGHT_BYTES).sum();
    let mut transfers = Vec::new();
    let (mut cycles, mut core_runs) = (0u64, 0u64);
    let mut out_tiles = Vec::new();
    for spans in &tiles {
        for (name, shape) in &first.inputs {
            transfers.push(Transfer { src: Memory::Ddr, dst: Memory::Sdram, bytes: bytes_of(*shape, spans[0].n, qa.feature_bits(name)), tensor: name.clone() });
        }
        if weight_bytes > 0 {
            transfers.push(Transfer { src: Memory::Ddr, dst: Memory::Local, bytes: weight_bytes, tensor: [first.name.as_str(), ".weight"].concat() });
        }
        let out = spans[chain.len()];
        transfers.push(Transfer { src: Memory::Sdram, dst: Memory::Ddr, bytes: bytes_of(last.out, out.n, qa.feature_bits(&last.name)), tensor: last.name.clone() });
        for (s, r) in chain.iter().zip(&spans[1..]) {
            cycles += s.cycles(hw, r.n);
            core_runs += s.blocks(hw) as u64;
        }
        out_tiles.push(Tile { rows: spans.clone(), channel_blocks: chain.iter().map(|s| s.blocks(hw)).collect() });
    }
    let ddr_bytes = transfers.iter().map(|t| t.bytes).sum();
    let names: Vec<&str> = chain.iter().map(|s| s.name.as_str()).collect();
    Some(Costed {
        node: ExecNode {
            mode: ExecMode::Vertical,
            chain: chain.iter().flat_map(|s| s.nodes.iter().copied()).collect(),
            name: names.join("+"),
            tiles: out_tiles,
            transfers,
            cycles,
            ideal_cycles: chain.iter().map(|s| s.cycles(hw, s.out.height)).sum(),
            core_runs,
            reads: first.inputs.iter().map(|(n, _)| n.clone()).collect(),
            writes: Some(last.name.clone()),
        },
        ddr_bytes,
    })
}

/// Whether `b` can take `a`'s output straight from SDRAM.
fn chainable(stages: &[Stage], a: usize, b: usize) -> bool {
    let (sa, sb) = (&stages[a], &stages[b]);
    sa.consumers == [b] && !sa.feeds_head && sb.inputs.len() == 1 && sb.inputs[0].0 == sa.name
}

/// Lower `graph` into execution nodes. Feature-map storage width comes from
/// `qa` (16 bits when unassigned).
pub fn build_schedule(graph: &Graph, hw: &HardwareConfig, qa: &QAssignment, mode: ScheduleMode) -> Result<Schedule, SimError> {
    let violations = graph.validate();
    if let Some(v) = violations.first() {
        return Err(GraphError::Invalid(violations.len(), v.clone()).into());
    }
    let (stages, inputs, outputs) = stages(graph)?;
    for s in &stages {
        if let StageKind::Conv { kernel, .. } | StageKind::TransposedConv { kernel, .. } = s.kind {
            if kernel > hw.core.kernel {
                return Err(SimError::KernelTooLarge { node: s.nodes[0], kernel, max: hw.core.kernel });
            }
        }
    }
    let singles: Vec<Costed> = stages.iter().map(|s| horizontal(s, hw, qa)).collect::<Result<_, _>>()?;

    let mut nodes: Vec<ExecNode> = Vec::new();
    match mode {
        ScheduleMode::Naive => nodes.extend(singles.into_iter().map(|c| c.node)),
        ScheduleMode::Chained => {
            let mut singles: Vec<Option<Costed>> = singles.into_iter().map(Some).collect();
            let continues: Vec<bool> = (0..stages.len())
                .map(|b| (0..b).any(|a| chainable(&stages, a, b)))
                .collect();
            for start in 0..stages.len() {
                if continues[start] {
                    continue;
                }
                let mut run = alloc::vec![start];
                while let Some(&next) = stages[*run.last().expect("non-empty")].consumers.first() {
                    if !chainable(&stages, *run.last().expect("non-empty"), next) {
                        break;
                    }
                    run.push(next);
                }
                // best[t]: fewest DDR bytes covering run[..t]; ties keep single layers
                let n = run.len();
                let mut best: Vec<(u64, usize)> = alloc::vec![(0, 0); n + 1];
                let mut plans: BTreeMap<(usize, usize), Costed> = BTreeMap::new();
                for t in 1..=n {
                    let single = singles[run[t - 1]].as_ref().expect("unused").ddr_bytes;
                    best[t] = (best[t - 1].0 + single, t - 1);
                    for s in 0..t - 1 {
                        let chain: Vec<&Stage> = run[s..t].iter().map(|&i| &stages[i]).collect();
                        if let Some(c) = vertical(&chain, hw, qa) {
                            if best[s].0 + c.ddr_bytes < best[t].0 {
                                best[t] = (best[s].0 + c.ddr_bytes, s);
                            }
                            plans.insert((s, t), c);
                        }
                    }
                }
                let mut cuts = Vec::new();
                let mut t = n;
                while t > 0 {
                    cuts.push((best[t].1, t));
                    t = best[t].1;
                }
                for (s, t) in cuts.into_iter().rev() {
                    if t - s == 1 {
                        nodes.push(singles[run[s]].take().expect("scheduled once").node);
                    } else {
                        nodes.push(plans.remove(&(s, t)).expect("planned chain").node);
                    }
                }
            }
        }
    }

    let mut tensor_bytes = BTreeMap::new();
    for (name, shape) in &inputs {
        tensor_bytes.insert(name.clone(), bytes_of(*shape, shape.height, qa.feature_bits(name)));
    }
    for s in &stages {
        tensor_bytes.insert(s.name.clone(), bytes_of(s.out, s.out.height, qa.feature_bits(&s.name)));
    }
    let input_bytes = inputs.iter().map(|(n, _)| tensor_bytes[n]).sum();
    let output_bytes = outputs.iter().map(|n| tensor_bytes[n]).sum();
    let written: Vec<&String> = nodes.iter().filter_map(|n| n.writes.as_ref()).collect();
    tensor_bytes.retain(|name, _| written.contains(&name) || inputs.iter().any(|(n, _)| n == name));
    Ok(Schedule {
        mode,
        weight_bytes: stages.iter().map(|s| s.weight_elems * WEIGHT_BYTES).sum(),
        nodes,
        tensor_bytes,
        input_bytes,
        output_bytes,
        inputs: inputs.into_iter().map(|(n, _)| n).collect(),
        outputs,
    })
}
