use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{apply_prune, coupling_groups, score_filters, select_prune_set, PruneCriterion, PruneError};
use crate::engine::{evaluate, train, History, LossWeights, Net, TrainConfig};
use crate::graph::Graph;
use crate::taskbench::{MetricsReport, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub target_flops: u64,
    /// Share of the current FLOPs removed per step, in (0, 1).
    pub step_fraction: f64,
    pub finetune_epochs: usize,
    pub final_finetune_epochs: usize,
    pub criterion: PruneCriterion,
}

impl PruneSchedule {
    pub fn new(target_flops: u64) -> Self {
        PruneSchedule {
            target_flops,
            step_fraction: 0.10,
            finetune_epochs: 32,
            final_finetune_epochs: 64,
            criterion: PruneCriterion::FilterNorm,
        }
    }
}

/// State after one prune step (step 0 is the input graph, the last entry
/// follows the final fine-tune).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub flops: u64,
    pub params: u64,
    pub filters_removed: usize,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub steps: Vec<TraceStep>,
    /// Number of prune steps taken (excludes step 0 and the final fine-tune).
    pub prune_steps: usize,
    /// Fine-tuning epochs run in total, including the final fine-tune.
    pub epochs: usize,
    pub histories: Vec<History>,
}

/// Score, select, remove and fine-tune until FLOPs drop to the target, then
/// fine-tune once more. Each step asks for `step_fraction` of the current
/// FLOPs, capped so the last step stops just under the target.
pub fn iterative_prune(
    graph: &Graph,
    train_set: &[Sample],
    val: &[Sample],
    schedule: &PruneSchedule,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<(Graph, PruneTrace), PruneError> {
    if !(schedule.step_fraction > 0.0 && schedule.step_fraction < 1.0) {
        return Err(PruneError::InvalidSchedule("step_fraction must lie in (0, 1)"));
    }
    let metrics = |g: &Graph| -> Result<Option<MetricsReport>, PruneError> {
        if val.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&Net::compile(g)?, val)?))
    };
    let mut g = graph.clone();
    let mut trace = PruneTrace::default();
    let mut flops = g.count_flops()?;
    trace.steps.push(TraceStep { step: 0, flops, params: g.count_params(), filters_removed: 0, metrics: metrics(&g)? });

    while flops > schedule.target_flops {
        let step = trace.prune_steps + 1;
        let want = (libm::ceil(flops as f64 * schedule.step_fraction) as u64).min(flops - schedule.target_flops);
        let scores = score_filters(&g, schedule.criterion)?;
        let groups = coupling_groups(&g)?;
        let mask = select_prune_set(&scores, &groups, &g, want)?;
        g = apply_prune(&g, &mask)?;
        let mut m = None;
        if schedule.finetune_epochs > 0 {
            let cfg = TrainConfig { epochs: schedule.finetune_epochs, seed: config.seed.wrapping_add(step as u64), ..*config };
            let (tuned, history) = train(&g, train_set, val, &cfg, weights)?;
            g = tuned;
            m = history.last_metrics();
            trace.histories.push(history);
            trace.epochs += schedule.finetune_epochs;
        } else if !val.is_empty() {
            m = metrics(&g)?;
        }
        flops = g.count_flops()?;
        trace.prune_steps = step;
        trace.steps.push(TraceStep { step, flops, params: g.count_params(), filters_removed: mask.len(), metrics: m });
    }

    if schedule.final_finetune_epochs > 0 {
        let step = trace.prune_steps + 1;
        let cfg = TrainConfig { epochs: schedule.final_finetune_epochs, seed: config.seed.wrapping_add(step as u64), ..*config };
        let (tuned, history) = train(&g, train_set, val, &cfg, weights)?;
        g = tuned;
        trace.epochs += schedule.final_finetune_epochs;
        trace.steps.push(TraceStep { step, flops, params: g.count_params(), filters_removed: 0, metrics: history.last_metrics() });
        trace.histories.push(history);
    }
    Ok((g, trace))
}
