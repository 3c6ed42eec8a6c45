//! Cost model of a fixed-function 5x5 convolution core with a three-level
//! memory (DDR, on-chip SDRAM, core-local): schedules graphs layer by layer
//! or as row-band chains and predicts frame runtime, DDR bandwidth and DDR
//! footprint.

mod schedule;
mod sim;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use schedule::{build_schedule, Stage, StageKind};
pub use sim::{lower_bounds, simulate, LayerReport, LowerBounds, SimReport};

use crate::graph::{GraphError, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    /// Largest supported kernel side.
    pub kernel: usize,
    /// Input channels consumed per cycle.
    pub par_in: usize,
    /// Output channels produced per cycle.
    pub par_out: usize,
    pub clock_hz: f64,
    /// Fixed cost of launching one core run (one input-block x output-block
    /// pass over a tile).
    pub launch_cycles: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdrConfig {
    /// Sustained link rate.
    pub bandwidth_bytes_per_s: f64,
    /// Footprint budget the workload is allowed to hold.
    pub budget_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmaConfig {
    pub setup_cycles: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub core: CoreConfig,
    pub ddr: DdrConfig,
    pub sdram_bytes: u64,
    pub local_bytes: u64,
    pub cameras_per_frame: usize,
    pub dma: DmaConfig,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            core: CoreConfig { kernel: 5, par_in: 4, par_out: 8, clock_hz: 625e6, launch_cycles: 64 },
            ddr: DdrConfig { bandwidth_bytes_per_s: 1.6e9, budget_bytes: 14 << 20 },
            sdram_bytes: 2 << 20,
            local_bytes: 64 << 10,
            cameras_per_frame: 4,
            dma: DmaConfig { setup_cycles: 256 },
        }
    }
}

impl HardwareConfig {
    /// Peak multiply-accumulate throughput in ops/s (1 MAC = 2 ops).
    pub fn peak_ops(&self) -> f64 {
        let k = self.core.kernel as f64;
        2.0 * k * k * (self.core.par_in * self.core.par_out) as f64 * self.core.clock_hz
    }
}

/// Cycles for one convolution: one clock per output pixel per pair of
/// input and output channel blocks.
pub fn core_cycles(hw: &HardwareConfig, in_ch: usize, out_ch: usize, out_h: usize, out_w: usize) -> u64 {
    (out_h * out_w * in_ch.div_ceil(hw.core.par_in) * out_ch.div_ceil(hw.core.par_out)) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Every layer round-trips its output through DDR.
    Naive,
    /// Single-consumer runs execute as row-band chains inside SDRAM.
    Chained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// One layer over its whole map.
    Horizontal,
    /// A band of rows flows through several layers.
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    Ddr,
    Sdram,
    Local,
}

/// Half-open row interval `[start, start + n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpan {
    pub start: usize,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    /// Rows of the chain input followed by rows produced by each stage.
    pub rows: Vec<RowSpan>,
    /// Input-block x output-block core runs per stage.
    pub channel_blocks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub src: Memory,
    pub dst: Memory,
    pub bytes: u64,
    /// Feature map name, or `"{node}.weight"` for parameters.
    pub tensor: String,
}

/// One schedulable unit: a single stage or a vertical chain of stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecNode {
    pub mode: ExecMode,
    /// Graph nodes covered, in execution order.
    pub chain: Vec<NodeId>,
    pub name: String,
    pub tiles: Vec<Tile>,
    pub transfers: Vec<Transfer>,
    /// Core cycles including halo recomputation, excluding launch overhead.
    pub cycles: u64,
    /// Cycles the same layers would need without recomputation.
    pub ideal_cycles: u64,
    pub core_runs: u64,
    /// DDR feature maps read and the one written (if any).
    pub reads: Vec<String>,
    pub writes: Option<String>,
}

/// Execution plan for one camera image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub nodes: Vec<ExecNode>,
    /// Bytes of every DDR-resident feature map.
    pub tensor_bytes: alloc::collections::BTreeMap<String, u64>,
    pub weight_bytes: u64,
    /// Input frames (per camera).
    pub input_bytes: u64,
    /// Head outputs (per camera).
    pub output_bytes: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("layer {node} needs {needed} bytes on chip; only {available} available")]
    Infeasible { node: NodeId, needed: u64, available: u64 },
    #[error("kernel {kernel} at {node} exceeds the core's {max}x{max} window")]
    KernelTooLarge { node: NodeId, kernel: usize, max: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}
