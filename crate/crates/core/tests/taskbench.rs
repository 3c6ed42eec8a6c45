use enf_core::taskbench::{
    decode_detections, eval_detection, eval_segmentation, eval_soiling, generate_dataset, generate_sample, geometric_mean,
    soil_tiles_from_mask, BBox, DatasetError, DatasetSpec, Detection, GroundTruth, MetricsReport, SOIL_GRID,
};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

#[test]
fn iou_examples() {
    let a = BBox { x0: 0.0, y0: 0.0, x1: 2.0, y1: 2.0 };
    let b = BBox { x0: 1.0, y0: 1.0, x1: 3.0, y1: 3.0 };
    assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-6);
    assert_eq!(a.iou(&a), 1.0);
    let far = BBox { x0: 5.0, y0: 5.0, x1: 6.0, y1: 6.0 };
    assert_eq!(a.iou(&far), 0.0);
    assert_eq!(BBox::from_center(1.0, 1.0, 2.0, 2.0), a);
}

fn gt(image: usize, class: usize, x: f32) -> GroundTruth {
    GroundTruth { image, class, bbox: BBox { x0: x, y0: 0.0, x1: x + 10.0, y1: 10.0 } }
}

fn det(image: usize, class: usize, x: f32, score: f32) -> Detection {
    Detection { image, class, score, bbox: BBox { x0: x, y0: 0.0, x1: x + 10.0, y1: 10.0 } }
}

#[test]
fn average_precision_example() {
    let gts = [gt(0, 0, 0.0), gt(0, 0, 20.0)];
    // hit, miss, hit: PR points (0.5, 1), (0.5, 0.5), (1, 2/3)
    let preds = [det(0, 0, 0.0, 0.9), det(0, 0, 50.0, 0.8), det(0, 0, 20.0, 0.7)];
    let e = eval_detection(&preds, &gts, 2, 0.5);
    assert!(close(e.per_class[0].unwrap(), 100.0 * (0.5 + 0.5 * 2.0 / 3.0)));
    assert_eq!(e.per_class[1], None);
    assert!(close(e.map, e.per_class[0].unwrap()));

    let perfect = eval_detection(&[det(0, 0, 0.0, 0.9), det(0, 0, 20.0, 0.5)], &gts, 1, 0.5);
    assert!(close(perfect.map, 100.0));
    assert!(close(eval_detection(&[], &gts, 1, 0.5).map, 0.0));
    // a box in another image does not match
    assert!(close(eval_detection(&[det(1, 0, 0.0, 0.9)], &gts, 1, 0.5).map, 0.0));
    // each ground truth is matched once
    let dup = eval_detection(&[det(0, 0, 0.0, 0.9), det(0, 0, 0.0, 0.8)], &gts[..1], 1, 0.5);
    assert!(close(dup.map, 100.0));
}

#[test]
fn detection_order_independent() {
    let gts = [gt(0, 0, 0.0), gt(1, 0, 0.0), gt(1, 1, 30.0)];
    let mut preds = vec![det(0, 0, 1.0, 0.5), det(1, 0, 2.0, 0.5), det(1, 1, 31.0, 0.7), det(0, 1, 0.0, 0.6)];
    let a = eval_detection(&preds, &gts, 2, 0.5);
    preds.reverse();
    assert_eq!(a, eval_detection(&preds, &gts, 2, 0.5));
}

#[test]
fn segmentation_miou_example() {
    let gt = [0u8, 0, 1, 1];
    let pred = [0u8, 1, 1, 1];
    // class 0: 1/2, class 1: 2/3
    assert!(close(eval_segmentation(&[(&pred, &gt)], 3), 100.0 * (0.5 + 2.0 / 3.0) / 2.0));
    assert!(close(eval_segmentation(&[(&gt, &gt)], 3), 100.0));
}

#[test]
fn soiling_f1_example() {
    let gt = [1u8, 0, 1, 0];
    let pred = [1u8, 1, 0, 0];
    assert!(close(eval_soiling(&[(&pred, &gt)], 2), 50.0));
    // all clean everywhere
    assert!(close(eval_soiling(&[(&[0u8; 4], &[0u8; 4])], 3), 100.0));
    // macro average over soiled classes 1 (F1 1) and 2 (F1 0)
    assert!(close(eval_soiling(&[(&[1u8, 0], &[1u8, 2])], 3), 50.0));
}

#[test]
fn geometric_mean_examples() {
    assert!(close(geometric_mean(&[1.0, 100.0, 10.0]), 10.0));
    assert_eq!(geometric_mean(&[5.0, 0.0]), 0.0);
    assert_eq!(geometric_mean(&[]), 0.0);
    let r = MetricsReport::partial(None, Some(25.0), Some(100.0));
    assert!(close(r.geo_mean, 50.0));
    assert_eq!(r.det_map, 0.0);
}

#[test]
fn decode_one_confident_cell() {
    // grid 2, one object class: channels obj, class, cx, cy, w, h
    let mut out = vec![0.0f32; 6 * 4];
    for k in 0..4 {
        out[k] = -10.0;
    }
    out[3] = 10.0; // bottom-right cell
    let d = decode_detections(&out, 2, 16, 7, 0.01);
    assert_eq!(d.len(), 1);
    assert_eq!((d[0].image, d[0].class), (7, 0));
    assert!((d[0].score - 1.0 / (1.0 + (-10.0f32).exp())).abs() < 1e-6);
    // sigmoid(0) = 0.5: centre of the cell, half the image wide
    assert_eq!(d[0].bbox, BBox::from_center(12.0, 12.0, 8.0, 8.0));
}

#[test]
fn soil_tiles_threshold() {
    let s = 8;
    let mut mask = vec![0u8; s * s];
    // tile (0,0) fully class 1
    for r in 0..2 {
        for c in 0..2 {
            mask[r * s + c] = 1;
        }
    }
    // tile (0,1): half class 2
    mask[2] = 2;
    mask[3] = 2;
    // tile (0,2): one pixel of four
    mask[4] = 1;
    let t = soil_tiles_from_mask(&mask, s, 3, 0.3);
    assert_eq!(&t[..4], &[1, 2, 0, 0]);
    assert!(t[4..].iter().all(|&v| v == 0));
}

#[test]
fn dataset_is_deterministic_per_index() {
    let spec = DatasetSpec::new(11, 6, 32, 3);
    let a = generate_dataset(&spec).unwrap();
    assert_eq!(a, generate_dataset(&spec).unwrap());
    // sample i does not depend on how many samples are drawn
    let more = generate_dataset(&DatasetSpec { n_samples: 10, ..spec }).unwrap();
    assert_eq!(&more[..6], &a[..]);
    assert_eq!(generate_sample(&spec, 4), a[4]);
    assert_ne!(generate_dataset(&DatasetSpec { seed: 12, ..spec }).unwrap(), a);
}

#[test]
fn dataset_rejects_bad_specs() {
    assert!(matches!(generate_dataset(&DatasetSpec::new(0, 1, 30, 3)), Err(DatasetError::InvalidSize { .. })));
    assert!(matches!(generate_dataset(&DatasetSpec::new(0, 1, 32, 1)), Err(DatasetError::TooFewClasses)));
}

#[test]
fn samples_are_consistent() {
    let spec = DatasetSpec::new(3, 20, 32, 4);
    for s in generate_dataset(&spec).unwrap() {
        assert_eq!(s.y.len(), 32 * 32);
        assert_eq!(s.uv.len(), 2 * 16 * 16);
        assert!(s.y.iter().chain(&s.uv).all(|v| (0.0..=1.0).contains(v)));
        let seg = s.seg.as_ref().unwrap();
        assert!(seg.iter().all(|&c| (c as usize) < spec.n_classes));
        let det = s.det.as_ref().unwrap();
        assert_eq!(det.grid, 4);
        let boxes = det.boxes(32);
        assert!(!boxes.is_empty());
        for (class, b) in boxes {
            assert!(class + 1 < spec.n_classes);
            assert!(b.area() > 0.0);
            assert!(b.x0 >= -1e-3 && b.y0 >= -1e-3 && b.x1 <= 32.001 && b.y1 <= 32.001, "{b:?}");
        }
        assert!(s.soil.unwrap().iter().all(|&c| (c as usize) < spec.soil_classes));
    }
}

#[test]
fn flip_is_an_involution() {
    let s = generate_sample(&DatasetSpec::new(5, 1, 32, 3), 0);
    let f = s.flip_horizontal();
    assert_ne!(f, s);
    assert_eq!(f.flip_horizontal(), s);
    let soil = s.soil.unwrap();
    let fs = f.soil.unwrap();
    for r in 0..SOIL_GRID {
        for c in 0..SOIL_GRID {
            assert_eq!(fs[r * SOIL_GRID + c], soil[r * SOIL_GRID + SOIL_GRID - 1 - c]);
        }
    }
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in prop::array::uniform4(0.0f32..50.0), b in prop::array::uniform4(0.0f32..50.0)) {
        let mk = |v: [f32; 4]| BBox { x0: v[0].min(v[1]), x1: v[0].max(v[1]), y0: v[2].min(v[3]), y1: v[2].max(v[3]) };
        let (a, b) = (mk(a), mk(b));
        let (x, y) = (a.iou(&b), b.iou(&a));
        prop_assert!((x - y).abs() < 1e-6);
        prop_assert!((0.0..=1.0 + 1e-6).contains(&x));
    }

    #[test]
    fn miou_perfect_prediction(mask in prop::collection::vec(0u8..4, 1..64)) {
        prop_assert!(close(eval_segmentation(&[(&mask, &mask)], 4), 100.0));
    }
}
