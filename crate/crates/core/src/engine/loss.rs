use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::net::{HeadOutputs, Tensor};
use crate::graph::Task;
use crate::taskbench::Sample;
use crate::Real;

/// Static task weights of the summed multi-task loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub det: f64,
    pub seg: f64,
    pub soil: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { det: 1.0, seg: 1.0, soil: 1.0 }
    }
}

impl LossWeights {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Detection => self.det,
            Task::Segmentation => self.seg,
            Task::Soiling => self.soil,
        }
    }

    pub fn is_valid(&self) -> bool {
        let w = [self.det, self.seg, self.soil];
        w.iter().all(|&v| v >= 0.0 && v.is_finite()) && w.iter().any(|&v| v > 0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Unweighted detection, segmentation and soiling losses.
    pub per_task: [f64; 3],
}

/// Weighted multi-task loss and its gradient with respect to each head output.
///
/// Detection: objectness BCE over all cells, class cross-entropy and squared
/// error of the sigmoid box terms over object cells. Segmentation and
/// soiling: mean per-pixel / per-tile cross-entropy. Samples without an
/// annotation for a task are left out of that task's terms.
pub fn loss_and_grad<T: Real>(outputs: &HeadOutputs<T>, batch: &[&Sample], weights: &LossWeights) -> (LossValue, HeadOutputs<T>) {
    let mut value = LossValue::default();
    let mut grads = HeadOutputs::new();
    for (&task, out) in outputs {
        let w = weights.get(task);
        let mut g = Tensor::zeros(out.n, out.shape);
        let l = match task {
            Task::Detection => detection(out, batch, T::of(w), &mut g),
            Task::Segmentation => dense_ce(out, batch, T::of(w), &mut g, |s| s.seg.as_deref()),
            Task::Soiling => dense_ce(out, batch, T::of(w), &mut g, |s| s.soil.as_ref().map(|t| t.as_slice())),
        };
        value.per_task[task.index()] = l;
        value.total += w * l;
        grads.insert(task, g);
    }
    (value, grads)
}

pub fn loss<T: Real>(outputs: &HeadOutputs<T>, batch: &[&Sample], weights: &LossWeights) -> LossValue {
    loss_and_grad(outputs, batch, weights).0
}

fn softmax_into<T: Real>(logits: &mut [T]) {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in logits.iter_mut() {
        *v = (*v - m).exp_libm();
        s += *v;
    }
    for v in logits.iter_mut() {
        *v /= s;
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp_libm())
}

/// Cross-entropy over channel-wise logits against integer labels per
/// spatial position.
fn dense_ce<T: Real, F>(out: &Tensor<T>, batch: &[&Sample], w: T, g: &mut Tensor<T>, labels: F) -> f64
where
    F: Fn(&Sample) -> Option<&[u8]>,
{
    let ch = out.shape.channels;
    let plane = out.shape.spatial();
    let annotated: Vec<usize> = (0..out.n).filter(|&i| labels(batch[i]).is_some()).collect();
    if annotated.is_empty() {
        return 0.0;
    }
    let count = (annotated.len() * plane) as f64;
    let scale = w / T::of(count);
    let mut total = 0.0;
    let mut probs = alloc::vec![T::zero(); ch];
    for &i in &annotated {
        let lab = labels(batch[i]).expect("annotated");
        debug_assert_eq!(lab.len(), plane);
        let x = out.sample(i);
        let gi = g.sample_mut(i);
        for p in 0..plane {
            for c in 0..ch {
                probs[c] = x[c * plane + p];
            }
            let m = probs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + probs.iter().fold(T::zero(), |a, &v| a + (v - m).exp_libm()).ln_libm();
            let t = lab[p] as usize;
            total += (lse - x[t * plane + p]).as_f64();
            softmax_into(&mut probs);
            for c in 0..ch {
                let target = if c == t { T::one() } else { T::zero() };
                gi[c * plane + p] = (probs[c] - target) * scale;
            }
        }
    }
    total / count
}

fn detection<T: Real>(out: &Tensor<T>, batch: &[&Sample], w: T, g: &mut Tensor<T>) -> f64 {
    let ch = out.shape.channels;
    let n_cls = ch - 5;
    let cells = out.shape.spatial();
    let annotated: Vec<usize> = (0..out.n).filter(|&i| batch[i].det.is_some()).collect();
    if annotated.is_empty() {
        return 0.0;
    }
    let n_objects: usize = annotated
        .iter()
        .map(|&i| batch[i].det.as_ref().unwrap().cells.iter().filter(|c| c.is_some()).count())
        .sum();
    let cell_scale = w / T::of((annotated.len() * cells) as f64);
    let obj_scale = w / T::of(n_objects.max(1) as f64);
    let (mut bce, mut ce, mut box_l2) = (0.0, 0.0, 0.0);
    let mut probs = alloc::vec![T::zero(); n_cls];
    for &i in &annotated {
        let targets = batch[i].det.as_ref().unwrap();
        debug_assert_eq!(targets.cells.len(), cells);
        let x = out.sample(i);
        let gi = g.sample_mut(i);
        for (k, cell) in targets.cells.iter().enumerate() {
            let z = x[k];
            let t = if cell.is_some() { T::one() } else { T::zero() };
            bce += (z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp_libm()).ln_libm()).as_f64();
            gi[k] = (sigmoid(z) - t) * cell_scale;
            let Some(cell) = cell else { continue };

            for c in 0..n_cls {
                probs[c] = x[(1 + c) * cells + k];
            }
            let m = probs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + probs.iter().fold(T::zero(), |a, &v| a + (v - m).exp_libm()).ln_libm();
            ce += (lse - probs[cell.class]).as_f64();
            softmax_into(&mut probs);
            for c in 0..n_cls {
                let target = if c == cell.class { T::one() } else { T::zero() };
                gi[(1 + c) * cells + k] = (probs[c] - target) * obj_scale;
            }

            let want = [cell.cx, cell.cy, cell.w, cell.h];
            for (j, &tv) in want.iter().enumerate() {
                let idx = (1 + n_cls + j) * cells + k;
                let s = sigmoid(x[idx]);
                let d = s - T::from_f32(tv);
                box_l2 += (d * d).as_f64();
                gi[idx] = T::of(2.0) * d * s * (T::one() - s) * obj_scale;
            }
        }
    }
    let n_obj = n_objects.max(1) as f64;
    bce / (annotated.len() * cells) as f64 + ce / n_obj + box_l2 / n_obj
}

/// Per-pixel argmax of channel logits for one sample.
pub fn argmax_channels<T: Real>(x: &[T], channels: usize) -> Vec<u8> {
    let plane = x.len() / channels;
    (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..channels {
                if x[c * plane + p] > x[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
