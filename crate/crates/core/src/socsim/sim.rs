use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::schedule::stages;
use super::{core_cycles, ExecMode, ExecNode, HardwareConfig, Memory, Schedule, StageKind};
use crate::graph::{Graph, GraphError};
use crate::quant::QAssignment;

const MB: f64 = (1u64 << 20) as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub mode: ExecMode,
    pub cycles: u64,
    pub core_runs: u64,
    /// DDR traffic for one camera image.
    pub ddr_bytes: u64,
    /// Time for one camera image.
    pub time_s: f64,
}

/// Predicted cost of one frame (all cameras).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub runtime_s: f64,
    pub fps: f64,
    pub ddr_bytes: u64,
    pub bandwidth_gbps: f64,
    /// Weights, input and output frames for every camera, plus the largest
    /// set of simultaneously live intermediate maps.
    pub peak_ddr_bytes: u64,
    pub footprint_mb: f64,
    pub cycles: u64,
    pub core_runs: u64,
    /// Useful core cycles over elapsed cycles.
    pub utilization: f64,
    pub per_layer: Vec<LayerReport>,
    /// Feature-map DDR traffic per frame, by tensor.
    pub tensor_traffic: BTreeMap<String, u64>,
}

fn touches_ddr(node: &ExecNode) -> u64 {
    node.transfers.iter().filter(|t| t.src == Memory::Ddr || t.dst == Memory::Ddr).map(|t| t.bytes).sum()
}

fn node_time(node: &ExecNode, hw: &HardwareConfig) -> f64 {
    let clock = hw.core.clock_hz;
    let compute = (node.cycles + node.core_runs * hw.core.launch_cycles) as f64 / clock;
    let transfer = touches_ddr(node) as f64 / hw.ddr.bandwidth_bytes_per_s;
    compute.max(transfer) + (node.transfers.len() as u64 * hw.dma.setup_cycles) as f64 / clock
}

/// Largest total of intermediate DDR maps alive at once, walking the
/// schedule in order.
fn peak_intermediates(schedule: &Schedule) -> u64 {
    let mut span: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, node) in schedule.nodes.iter().enumerate() {
        if let Some(w) = &node.writes {
            span.entry(w.as_str()).or_insert((i, i));
        }
        for r in &node.reads {
            if let Some(s) = span.get_mut(r.as_str()) {
                s.1 = s.1.max(i);
            }
        }
    }
    let pinned = |name: &str| schedule.inputs.iter().chain(&schedule.outputs).any(|n| n == name);
    (0..schedule.nodes.len())
        .map(|i| {
            span.iter()
                .filter(|(name, (b, d))| !pinned(name) && *b <= i && i <= *d)
                .map(|(name, _)| schedule.tensor_bytes.get(*name).copied().unwrap_or(0))
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}

pub fn simulate(schedule: &Schedule, hw: &HardwareConfig) -> SimReport {
    let cams = hw.cameras_per_frame as u64;
    let mut per_layer = Vec::with_capacity(schedule.nodes.len());
    let mut tensor_traffic: BTreeMap<String, u64> = BTreeMap::new();
    let (mut time, mut bytes, mut cycles, mut ideal, mut runs) = (0.0, 0u64, 0u64, 0u64, 0u64);
    for node in &schedule.nodes {
        let t = node_time(node, hw);
        let b = touches_ddr(node);
        for tr in &node.transfers {
            if tr.dst != Memory::Local && (tr.src == Memory::Ddr || tr.dst == Memory::Ddr) {
                *tensor_traffic.entry(tr.tensor.clone()).or_insert(0) += tr.bytes * cams;
            }
        }
        time += t;
        bytes += b;
        cycles += node.cycles;
        ideal += node.ideal_cycles;
        runs += node.core_runs;
        per_layer.push(LayerReport {
            name: node.name.clone(),
            mode: node.mode,
            cycles: node.cycles,
            core_runs: node.core_runs,
            ddr_bytes: b,
            time_s: t,
        });
    }
    let runtime_s = time * cams as f64;
    let ddr_bytes = bytes * cams;
    let peak_ddr_bytes = schedule.weight_bytes + cams * (schedule.input_bytes + schedule.output_bytes) + peak_intermediates(schedule);
    let positive = |x: f64| if runtime_s > 0.0 { x / runtime_s } else { 0.0 };
    SimReport {
        runtime_s,
        fps: positive(1.0),
        ddr_bytes,
        bandwidth_gbps: positive(ddr_bytes as f64) / 1e9,
        peak_ddr_bytes,
        footprint_mb: peak_ddr_bytes as f64 / MB,
        cycles: cycles * cams,
        core_runs: runs * cams,
        utilization: positive((ideal * cams) as f64 / hw.core.clock_hz),
        per_layer,
        tensor_traffic,
    }
}

/// Runtime floors that no schedule can beat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBounds {
    /// Convolution cycles at full core occupancy.
    pub compute_lb_s: f64,
    /// Weights, input and output frames crossing DDR once.
    pub transfer_lb_s: f64,
}

pub fn lower_bounds(graph: &Graph, hw: &HardwareConfig, qa: &QAssignment) -> Result<LowerBounds, GraphError> {
    let (stages, inputs, outputs) = stages(graph)?;
    let cams = hw.cameras_per_frame as f64;
    let cycles: u64 = stages
        .iter()
        .map(|s| match s.kind {
            StageKind::Conv { in_ch, out_ch, .. } | StageKind::TransposedConv { in_ch, out_ch, .. } => {
                core_cycles(hw, in_ch, out_ch, s.out.height, s.out.width)
            }
            StageKind::Elementwise { .. } => 0,
        })
        .sum();
    let feature = |name: &str, elems: usize| elems as u64 * qa.feature_bits(name) as u64 / 8;
    let io: u64 = inputs.iter().map(|(n, s)| feature(n, s.elements())).sum::<u64>()
        + outputs
            .iter()
            .map(|n| stages.iter().find(|s| &s.name == n).map_or(0, |s| feature(n, s.out.elements())))
            .sum::<u64>();
    let weights: u64 = stages.iter().map(|s| s.weight_elems * 2).sum();
    Ok(LowerBounds {
        compute_lb_s: cycles as f64 / hw.core.clock_hz * cams,
        transfer_lb_s: (weights + io) as f64 / hw.ddr.bandwidth_bytes_per_s * cams,
    })
}
