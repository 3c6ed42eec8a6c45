use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::graph::{Task, TensorShape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
    }

    pub fn area(&self) -> f32 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f32 {
        let iw = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let ih = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn key(&self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: usize,
    pub class: usize,
    pub score: f32,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: usize,
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    /// AP per object class in [0, 100]; `None` when the class has no ground truth.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// Task metrics for one evaluation, all in [0, 100].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub det_map: f64,
    pub seg_miou: f64,
    pub soil_f1: f64,
    pub geo_mean: f64,
}

impl MetricsReport {
    pub fn new(det_map: f64, seg_miou: f64, soil_f1: f64) -> Self {
        MetricsReport { det_map, seg_miou, soil_f1, geo_mean: geometric_mean(&[det_map, seg_miou, soil_f1]) }
    }

    /// Report for networks without every head: missing metrics read 0 and
    /// the geometric mean runs over the present ones.
    pub fn partial(det_map: Option<f64>, seg_miou: Option<f64>, soil_f1: Option<f64>) -> Self {
        let present: Vec<f64> = [det_map, seg_miou, soil_f1].iter().flatten().copied().collect();
        MetricsReport {
            det_map: det_map.unwrap_or(0.0),
            seg_miou: seg_miou.unwrap_or(0.0),
            soil_f1: soil_f1.unwrap_or(0.0),
            geo_mean: geometric_mean(&present),
        }
    }
}

/// Geometric mean of non-negative values (0 if any value is 0).
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let log_sum: f64 = values.iter().map(|v| libm::log(*v)).sum();
    libm::exp(log_sum / values.len() as f64)
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

/// Turn a detection head output `[1 + C + 4, grid, grid]` into scored boxes.
///
/// Channel 0 is the objectness logit, channels `1..=C` class logits, and the
/// last four are sigmoid-squashed `cx, cy` (inside the cell) and `w, h`
/// (relative to the image). Score is objectness times the top class
/// probability; cells scoring below `min_score` are dropped.
pub fn decode_detections(out: &[f32], grid: usize, image_size: usize, image: usize, min_score: f32) -> Vec<Detection> {
    let cells = grid * grid;
    let channels = out.len() / cells;
    let n_cls = channels - 5;
    let cell = image_size as f32 / grid as f32;
    let s = image_size as f32;
    let at = |ch: usize, k: usize| out[ch * cells + k];
    let mut dets = Vec::new();
    for k in 0..cells {
        let obj = sigmoid(at(0, k));
        let max_logit = (0..n_cls).map(|c| at(1 + c, k)).fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0;
        let mut best = (0, f32::NEG_INFINITY);
        for c in 0..n_cls {
            let l = at(1 + c, k);
            denom += libm::expf(l - max_logit);
            if l > best.1 {
                best = (c, l);
            }
        }
        let score = obj * libm::expf(best.1 - max_logit) / denom;
        if score < min_score {
            continue;
        }
        let (row, col) = ((k / grid) as f32, (k % grid) as f32);
        let cx = (col + sigmoid(at(1 + n_cls, k))) * cell;
        let cy = (row + sigmoid(at(2 + n_cls, k))) * cell;
        let w = sigmoid(at(3 + n_cls, k)) * s;
        let h = sigmoid(at(4 + n_cls, k)) * s;
        dets.push(Detection { image, class: best.0, score, bbox: BBox::from_center(cx, cy, w, h) });
    }
    dets
}

fn cmp_f32(a: f32, b: f32) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Per-class average precision by greedy IoU matching and all-point
/// interpolated precision/recall integration; mAP averages classes that have
/// ground truth.
pub fn eval_detection(preds: &[Detection], gts: &[GroundTruth], n_classes: usize, iou_threshold: f32) -> DetectionEval {
    let mut per_class = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let class_gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == class).collect();
        if class_gts.is_empty() {
            per_class.push(None);
            continue;
        }
        let mut dets: Vec<&Detection> = preds.iter().filter(|d| d.class == class).collect();
        // Score-descending; ties broken by geometry so the result does not
        // depend on the order images were evaluated in.
        dets.sort_by(|a, b| {
            cmp_f32(b.score, a.score).then_with(|| {
                a.bbox.key().iter().zip(b.bbox.key().iter()).map(|(x, y)| cmp_f32(*x, *y)).fold(Ordering::Equal, Ordering::then)
            })
        });
        let mut matched = alloc::vec![false; class_gts.len()];
        let mut tp = 0usize;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            let mut best: Option<(usize, f32)> = None;
            for (j, g) in class_gts.iter().enumerate() {
                if matched[j] || g.image != d.image {
                    continue;
                }
                let iou = d.bbox.iou(&g.bbox);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                matched[j] = true;
                tp += 1;
            }
            let group_end = dets.get(i + 1).map_or(true, |n| n.score != d.score);
            if group_end {
                let n = (i + 1) as f64;
                points.push((tp as f64 / class_gts.len() as f64, tp as f64 / n));
            }
        }
        per_class.push(Some(100.0 * average_precision(&points)));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    DetectionEval { per_class, map }
}

/// Area under the precision envelope of `(recall, precision)` points given in
/// rank order.
fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<(f64, f64)> = points.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &envelope {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Dataset-level intersection/union counts per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SegAccumulator {
    inter: Vec<u64>,
    union: Vec<u64>,
}

impl SegAccumulator {
    pub fn new(n_classes: usize) -> Self {
        SegAccumulator { inter: alloc::vec![0; n_classes], union: alloc::vec![0; n_classes] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) {
        assert_eq!(pred.len(), gt.len(), "mask sizes differ");
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p == g {
                self.inter[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &SegAccumulator) {
        for (a, b) in self.inter.iter_mut().zip(&other.inter) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
    }

    /// Mean IoU in [0, 100] over classes present in prediction or ground truth.
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = self
            .inter
            .iter()
            .zip(&self.union)
            .filter(|(_, &u)| u > 0)
            .map(|(&i, &u)| i as f64 / u as f64)
            .collect();
        if ious.is_empty() {
            return 100.0;
        }
        100.0 * ious.iter().sum::<f64>() / ious.len() as f64
    }
}

pub fn eval_segmentation(pairs: &[(&[u8], &[u8])], n_classes: usize) -> f64 {
    let mut acc = SegAccumulator::new(n_classes);
    for (p, g) in pairs {
        acc.add(p, g);
    }
    acc.miou()
}

/// Tile-level confusion counts per soiling class (class 0 is clean).
#[derive(Clone, Debug, PartialEq)]
pub struct SoilAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl SoilAccumulator {
    pub fn new(classes: usize) -> Self {
        SoilAccumulator { tp: alloc::vec![0; classes], fp: alloc::vec![0; classes], fn_: alloc::vec![0; classes] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) {
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &SoilAccumulator) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
    }

    /// F1 in [0, 100], macro-averaged over the soiled classes that occur in
    /// prediction or ground truth. With no soiling anywhere the score is 100.
    pub fn f1(&self) -> f64 {
        let scores: Vec<f64> = (1..self.tp.len())
            .filter(|&c| self.tp[c] + self.fp[c] + self.fn_[c] > 0)
            .map(|c| 2.0 * self.tp[c] as f64 / (2 * self.tp[c] + self.fp[c] + self.fn_[c]) as f64)
            .collect();
        if scores.is_empty() {
            return 100.0;
        }
        100.0 * scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn eval_soiling(pairs: &[(&[u8], &[u8])], classes: usize) -> f64 {
    let mut acc = SoilAccumulator::new(classes);
    for (p, g) in pairs {
        acc.add(p, g);
    }
    acc.f1()
}

/// Streams head outputs of successive samples into all task metrics.
#[derive(Clone, Debug)]
pub struct TaskEvaluator {
    image_size: usize,
    det: Option<(usize, usize)>,
    dets: Vec<Detection>,
    gts: Vec<GroundTruth>,
    seg: Option<(usize, SegAccumulator)>,
    soil: Option<(usize, SoilAccumulator)>,
    seen: usize,
}

impl TaskEvaluator {
    /// `heads` gives each present head's output shape.
    pub fn new(heads: &[(Task, TensorShape)], image_size: usize) -> Self {
        let find = |t: Task| heads.iter().find(|h| h.0 == t).map(|h| h.1);
        TaskEvaluator {
            image_size,
            det: find(Task::Detection).map(|s| (s.height, s.channels)),
            dets: Vec::new(),
            gts: Vec::new(),
            seg: find(Task::Segmentation).map(|s| (s.channels, SegAccumulator::new(s.channels))),
            soil: find(Task::Soiling).map(|s| (s.channels, SoilAccumulator::new(s.channels))),
            seen: 0,
        }
    }

    /// Add one sample; `output(task)` returns that head's CHW output.
    pub fn add<'a, F>(&mut self, sample: &Sample, output: F)
    where
        F: Fn(Task) -> &'a [f32],
    {
        let idx = self.seen;
        self.seen += 1;
        if let (Some((grid, _)), Some(t)) = (self.det, &sample.det) {
            self.dets.extend(decode_detections(output(Task::Detection), grid, self.image_size, idx, 0.01));
            self.gts.extend(t.boxes(self.image_size).into_iter().map(|(class, bbox)| GroundTruth { image: idx, class, bbox }));
        }
        if let (Some((ch, acc)), Some(gt)) = (self.seg.as_mut(), &sample.seg) {
            acc.add(&argmax(output(Task::Segmentation), *ch), gt);
        }
        if let (Some((ch, acc)), Some(gt)) = (self.soil.as_mut(), &sample.soil) {
            acc.add(&argmax(output(Task::Soiling), *ch), gt);
        }
    }

    pub fn finish(&self) -> MetricsReport {
        let det = self.det.map(|(_, ch)| eval_detection(&self.dets, &self.gts, ch - 5, 0.5).map);
        MetricsReport::partial(det, self.seg.as_ref().map(|a| a.1.miou()), self.soil.as_ref().map(|a| a.1.f1()))
    }
}

fn argmax(x: &[f32], channels: usize) -> Vec<u8> {
    let plane = x.len() / channels;
    (0..plane)
        .map(|p| (1..channels).fold(0, |best, c| if x[c * plane + p] > x[best * plane + p] { c } else { best }) as u8)
        .collect()
}
