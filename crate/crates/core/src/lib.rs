//! Compression and deployment modeling for compact multi-task CNNs.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece
//! of the toolchain:
//!
//! * [`graph`]: the layer-graph IR with shape, parameter, FLOP and
//!   receptive-field analysis.
//! * [`taskbench`]: seeded synthetic detection / segmentation / soiling data
//!   and the task metrics.
//! * [`engine`]: float forward/backward execution, the weighted multi-task
//!   loss and Adam training.
//! * [`prune`]: structured filter pruning and the iterative
//!   prune / fine-tune loop.
//! * [`quant`]: power-of-two fixed-point calibration, integer execution and
//!   mixed 8/16-bit selection.
//! * [`socsim`]: the CNN-core and memory-hierarchy cost model with naive and
//!   chained (tiled) schedules.
//!
//! File formats, the CLI and the pipeline driver live in the `enf` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod demo;
pub mod engine;
pub mod graph;
pub mod prune;
pub mod quant;
pub mod real;
pub mod socsim;
pub mod taskbench;

pub use graph::{Graph, NodeId, NodeKind, TensorShape, Task};
pub use real::Real;
