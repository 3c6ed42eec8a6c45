use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CalibStats, QAssignment, QuantError};
use crate::graph::Graph;
use crate::socsim::{build_schedule, simulate, HardwareConfig, ScheduleMode, SimReport};

/// Limits the mixed assignment has to meet per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedTargets {
    pub bandwidth_gbps: f64,
    pub footprint_mb: f64,
}

impl MixedTargets {
    pub fn met_by(&self, r: &SimReport) -> bool {
        r.bandwidth_gbps <= self.bandwidth_gbps && r.footprint_mb <= self.footprint_mb
    }
}

/// State after narrowing one more feature map to 8 bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedStep {
    pub tensor: String,
    pub ddr_bytes: u64,
    pub bandwidth_gbps: f64,
    pub footprint_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedOutcome {
    pub assignment: QAssignment,
    pub report: SimReport,
    pub steps: Vec<MixedStep>,
    /// Feature maps left at 8 bits, in the order they were narrowed.
    pub eight_bit: Vec<String>,
}

fn run(graph: &Graph, qa: &QAssignment, hw: &HardwareConfig, mode: ScheduleMode) -> Result<SimReport, QuantError> {
    Ok(simulate(&build_schedule(graph, hw, qa, mode)?, hw))
}

/// Narrow feature maps to 8 bits, heaviest DDR traffic first, until the
/// simulated frame meets `targets`. Returns the most-narrowed outcome inside
/// `TargetUnreachable` when even all maps at 8 bits are not enough.
pub fn select_mixed_precision(
    graph: &Graph,
    base: &QAssignment,
    stats: &CalibStats,
    hw: &HardwareConfig,
    mode: ScheduleMode,
    targets: MixedTargets,
) -> Result<MixedOutcome, QuantError> {
    let mut qa = base.clone();
    let mut report = run(graph, &qa, hw, mode)?;
    let mut order: Vec<(String, u64)> = report
        .tensor_traffic
        .iter()
        .filter(|(name, _)| qa.feature_maps.get(*name).is_some_and(|q| q.bits > 8))
        .map(|(n, &b)| (n.clone(), b))
        .collect();
    // stable: equal traffic keeps name order
    order.sort_by_key(|t| core::cmp::Reverse(t.1));

    let mut outcome = MixedOutcome { assignment: qa.clone(), report: report.clone(), steps: Vec::new(), eight_bit: Vec::new() };
    for (name, _) in order {
        if targets.met_by(&report) {
            break;
        }
        qa.set_feature_bits(&name, 8, stats)?;
        report = run(graph, &qa, hw, mode)?;
        outcome.steps.push(MixedStep {
            tensor: name.clone(),
            ddr_bytes: report.ddr_bytes,
            bandwidth_gbps: report.bandwidth_gbps,
            footprint_mb: report.footprint_mb,
        });
        outcome.eight_bit.push(name);
    }
    outcome.assignment = qa;
    outcome.report = report;
    if targets.met_by(&outcome.report) {
        Ok(outcome)
    } else {
        Err(QuantError::TargetUnreachable { best: alloc::boxed::Box::new(outcome) })
    }
}
