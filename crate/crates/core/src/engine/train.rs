use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossWeights};
use super::net::{Mode, Net, ParamRole};
use super::EngineError;
use crate::graph::{Graph, Task, TensorShape};
use crate::taskbench::{MetricsReport, Sample, TaskEvaluator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Added to weight gradients as `l2 * w`.
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    /// Random horizontal flip and brightness jitter.
    pub augment: bool,
    /// Validate every `eval_every` epochs (and after the last); 0 = last only.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            l2: 1e-4,
            batch_size: 8,
            seed: 0,
            bn_momentum: 0.9,
            augment: false,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub per_task: [f64; 3],
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last_metrics(&self) -> Option<MetricsReport> {
        self.epochs.iter().rev().find_map(|e| e.metrics)
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
            lr: cfg.lr as f32,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.adam_eps as f32,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - libm::powf(self.beta1, self.t as f32);
        let c2 = 1.0 - libm::powf(self.beta2, self.t as f32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Every annotation must have one label per cell of its head's plane.
fn check_labels(net: &Net<f32>, samples: &[Sample]) -> Result<(), EngineError> {
    for s in samples {
        let found = [
            (Task::Detection, s.det.as_ref().map(|d| d.cells.len())),
            (Task::Segmentation, s.seg.as_ref().map(|m| m.len())),
            (Task::Soiling, s.soil.as_ref().map(|t| t.len())),
        ];
        for (task, n) in found {
            if let (Some(found), Some(shape)) = (n, net.head_shape(task)) {
                if found != shape.spatial() {
                    return Err(EngineError::LabelMismatch { task, expected: shape.spatial(), found });
                }
            }
        }
    }
    Ok(())
}

/// Train `graph` end to end; returns the trained graph and per-epoch history
/// (loss on the training set, metrics on `val`).
pub fn train(
    graph: &Graph,
    train_set: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<(Graph, History), EngineError> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(EngineError::InvalidConfig("epochs and batch_size must be at least 1"));
    }
    if !weights.is_valid() {
        return Err(EngineError::InvalidConfig("loss weights must be non-negative with at least one positive"));
    }
    if train_set.is_empty() {
        return Err(EngineError::InvalidConfig("empty training set"));
    }
    let mut net: Net<f32> = Net::compile(graph)?;
    check_labels(&net, train_set)?;
    let mut adam = Adam::new(net.params().len(), config);
    let decay_mask: Vec<bool> = {
        let mut mask = alloc::vec![false; net.params().len()];
        for e in net.layout().iter().filter(|e| e.role == ParamRole::Weight) {
            mask[e.offset..e.offset + e.len].iter_mut().for_each(|m| *m = true);
        }
        mask
    };
    let l2 = config.l2 as f32;
    let momentum = config.bn_momentum as f32;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut per_task = [0.0; 3];
        for chunk in order.chunks(config.batch_size) {
            let owned: Vec<Sample>;
            let batch: Vec<&Sample> = if config.augment {
                owned = chunk
                    .iter()
                    .map(|&i| {
                        let s = if rng.random_bool(0.5) { train_set[i].flip_horizontal() } else { train_set[i].clone() };
                        s.with_brightness(rng.random_range(0.8..1.2))
                    })
                    .collect();
                owned.iter().collect()
            } else {
                chunk.iter().map(|&i| &train_set[i]).collect()
            };
            let tape = net.forward(&batch, Mode::Train)?;
            let (value, head_grads) = loss_and_grad(&tape.heads(&net), &batch, weights);
            if !value.total.is_finite() {
                return Err(EngineError::Diverged { epoch });
            }
            let mut grads = net.backward(&tape, &head_grads);
            for ((g, &p), &decay) in grads.iter_mut().zip(net.params()).zip(&decay_mask) {
                if decay {
                    *g += l2 * p;
                }
            }
            adam.step(net.params_mut(), &grads);
            net.update_running_stats(&tape, momentum);
            let w = batch.len() as f64;
            sum += value.total * w;
            for (a, b) in per_task.iter_mut().zip(value.per_task) {
                *a += b * w;
            }
        }
        let n = train_set.len() as f64;
        let last = epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let metrics = if !val.is_empty() && (last || due) { Some(evaluate(&net, val)?) } else { None };
        history.epochs.push(EpochRecord { epoch, loss: sum / n, per_task: per_task.map(|v| v / n), metrics });
    }
    Ok((net.to_graph(graph), history))
}

/// Task metrics of an inference-mode network over `samples`.
pub fn evaluate(net: &Net<f32>, samples: &[Sample]) -> Result<MetricsReport, EngineError> {
    let heads: Vec<(Task, TensorShape)> = net.tasks().into_iter().filter_map(|t| net.head_shape(t).map(|s| (t, s))).collect();
    let mut eval = TaskEvaluator::new(&heads, net.image_size().unwrap_or(0));
    for chunk in samples.chunks(16) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let outs = net.predict(&batch)?;
        for (j, s) in chunk.iter().enumerate() {
            eval.add(s, |t| outs[&t].sample(j));
        }
    }
    Ok(eval.finish())
}
