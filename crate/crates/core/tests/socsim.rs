use std::collections::BTreeSet;

use enf_core::demo::{multitask_graph, DemoSpec};
use enf_core::graph::GraphBuilder;
use enf_core::quant::QAssignment;
use enf_core::socsim::{
    build_schedule, core_cycles, lower_bounds, simulate, ExecMode, HardwareConfig, Schedule, ScheduleMode, SimError,
    SimReport,
};
use enf_core::{Graph, Task, TensorShape};
use proptest::prelude::*;

fn hw1() -> HardwareConfig {
    HardwareConfig { cameras_per_frame: 1, ..Default::default() }
}

fn run(g: &Graph, hw: &HardwareConfig, mode: ScheduleMode) -> (Schedule, SimReport) {
    let s = build_schedule(g, hw, &QAssignment::default(), mode).unwrap();
    let r = simulate(&s, hw);
    (s, r)
}

/// y -> a (8 filters, 3x3) -> b (1 filter, 1x1) -> head, on an 8x8 image.
fn two_layer() -> Graph {
    let mut b = GraphBuilder::new();
    let y = b.input("y", TensorShape::new(1, 8, 8));
    let a = b.conv("a", y, 8, 3, 1);
    let o = b.conv("b", a, 1, 1, 1);
    b.head("out", o, Task::Segmentation);
    b.build().unwrap()
}

/// Three stride-1 5x5 convs on a `side` x `side` image, the last with one
/// filter.
fn k5_chain(side: usize, ch: usize) -> Graph {
    let mut b = GraphBuilder::new();
    let mut x = b.input("y", TensorShape::new(1, side, side));
    for (i, out) in [ch, ch, 1].into_iter().enumerate() {
        x = b.conv(&format!("c{i}"), x, out, 5, 1);
    }
    b.head("out", x, Task::Segmentation);
    b.build().unwrap()
}

fn demo(image: usize) -> Graph {
    multitask_graph(&DemoSpec { image, ..Default::default() }).unwrap()
}

#[test]
fn core_cycle_examples() {
    let hw = HardwareConfig::default();
    assert_eq!(core_cycles(&hw, 16, 32, 64, 64), 64 * 64 * 4 * 4);
    assert_eq!(core_cycles(&hw, 5, 9, 10, 10), 100 * 2 * 2);
    assert_eq!(core_cycles(&hw, 1, 1, 1, 1), 1);
    // 2 * 25 * 4 * 8 MACs per cycle at 625 MHz
    assert!((hw.peak_ops() - 1e12).abs() < 1.0);
}

#[test]
fn single_layer_modes_agree() {
    let mut b = GraphBuilder::new();
    let y = b.input("y", TensorShape::new(1, 16, 16));
    let c = b.conv("c", y, 4, 5, 1);
    b.head("out", c, Task::Segmentation);
    let g = b.build().unwrap();
    let hw = hw1();
    let (sn, rn) = run(&g, &hw, ScheduleMode::Naive);
    let (sc, rc) = run(&g, &hw, ScheduleMode::Chained);
    assert_eq!(sn.nodes, sc.nodes);
    assert_eq!(rn.runtime_s, rc.runtime_s);
    assert_eq!(rn.ddr_bytes, rc.ddr_bytes);
    // read 16x16 input, 4 * (25 + 1) parameters, write 4x16x16, 16-bit each
    assert_eq!(rn.ddr_bytes, 2 * (256 + 104 + 1024));
    assert_eq!(rn.cycles, core_cycles(&hw, 1, 4, 16, 16));
}

#[test]
fn chaining_saves_intermediate_round_trip() {
    let g = two_layer();
    let hw = hw1();
    let (_, naive) = run(&g, &hw, ScheduleMode::Naive);
    let (s, chained) = run(&g, &hw, ScheduleMode::Chained);
    assert_eq!(s.nodes.len(), 1);
    assert_eq!(s.nodes[0].mode, ExecMode::Vertical);
    assert_eq!(s.nodes[0].tiles.len(), 1);
    // the 8x8x8 map is neither written nor read back
    assert_eq!(naive.ddr_bytes - chained.ddr_bytes, 2 * 8 * 8 * 8 * 2);
    assert_eq!(naive.ddr_bytes, 128 + 160 + 1024 + 1024 + 18 + 128);
    // chained footprint drops the intermediate map
    assert_eq!(naive.peak_ddr_bytes - chained.peak_ddr_bytes, 8 * 8 * 8 * 2);
}

#[test]
fn halo_grows_by_kernel_minus_one_per_layer() {
    let g = k5_chain(64, 16);
    // room for a few rows only
    let hw = HardwareConfig { sdram_bytes: 64 << 10, ..hw1() };
    let (s, _) = run(&g, &hw, ScheduleMode::Chained);
    assert_eq!(s.nodes.len(), 1);
    let v = &s.nodes[0];
    assert!(v.tiles.len() > 3, "{} tiles", v.tiles.len());
    let band = v.tiles[0].rows.last().unwrap().n;
    let interior: Vec<_> = v.tiles.iter().filter(|t| t.rows[0].start > 0 && t.rows[0].start + t.rows[0].n < 64).collect();
    assert!(!interior.is_empty());
    for t in interior {
        let n: Vec<usize> = t.rows.iter().map(|r| r.n).collect();
        if n[3] == band {
            assert_eq!(n, vec![band + 12, band + 8, band + 4, band]);
        }
    }
    // recomputed halo rows cost extra cycles
    assert!(v.cycles > v.ideal_cycles);
}

#[test]
fn band_rows_two() {
    // interior two-row band: 2 -> 6 -> 10 -> 14 input rows
    let g = k5_chain(128, 4);
    for sdram in (4..64).map(|k| k << 10) {
        let hw = HardwareConfig { sdram_bytes: sdram, ..hw1() };
        let (s, _) = run(&g, &hw, ScheduleMode::Chained);
        let Some(v) = s.nodes.iter().find(|n| n.tiles[0].rows.len() == 4 && n.tiles[0].rows[3].n == 2) else {
            continue;
        };
        let t = &v.tiles[4];
        let n: Vec<usize> = t.rows.iter().map(|r| r.n).collect();
        assert_eq!(n, vec![14, 10, 6, 2]);
        assert_eq!(t.rows[0].start, 8 - 6);
        return;
    }
    panic!("no SDRAM size gave two-row bands");
}

#[test]
fn lower_bounds_hold() {
    for image in [32, 128] {
        let g = demo(image);
        let hw = HardwareConfig::default();
        let lb = lower_bounds(&g, &hw, &QAssignment::default()).unwrap();
        assert!(lb.compute_lb_s > 0.0 && lb.transfer_lb_s > 0.0);
        for mode in [ScheduleMode::Naive, ScheduleMode::Chained] {
            let (_, r) = run(&g, &hw, mode);
            assert!(r.runtime_s >= lb.compute_lb_s.max(lb.transfer_lb_s), "{mode:?} at {image}");
        }
    }
}

#[test]
fn empty_inputs_cost_nothing() {
    let hw = HardwareConfig::default();
    let empty = Graph::from_parts(vec![], vec![]);
    let lb = lower_bounds(&empty, &hw, &QAssignment::default()).unwrap();
    assert_eq!((lb.compute_lb_s, lb.transfer_lb_s), (0.0, 0.0));
    let s = Schedule {
        mode: ScheduleMode::Naive,
        nodes: vec![],
        tensor_bytes: Default::default(),
        weight_bytes: 0,
        input_bytes: 0,
        output_bytes: 0,
        inputs: vec![],
        outputs: vec![],
    };
    let r = simulate(&s, &hw);
    assert_eq!((r.runtime_s, r.fps, r.bandwidth_gbps, r.ddr_bytes), (0.0, 0.0, 0.0, 0));
}

#[test]
fn infeasible_when_nothing_fits() {
    let hw = HardwareConfig { sdram_bytes: 256, local_bytes: 256, ..hw1() };
    let err = build_schedule(&demo(64), &hw, &QAssignment::default(), ScheduleMode::Naive).unwrap_err();
    assert!(matches!(err, SimError::Infeasible { .. }), "{err:?}");
}

#[test]
fn kernel_limit_enforced() {
    let hw = HardwareConfig { core: enf_core::socsim::CoreConfig { kernel: 3, ..hw1().core }, ..hw1() };
    let err = build_schedule(&demo(64), &hw, &QAssignment::default(), ScheduleMode::Naive).unwrap_err();
    assert!(matches!(err, SimError::KernelTooLarge { kernel: 5, max: 3, .. }));
}

#[test]
fn cameras_scale_frame_costs() {
    let g = demo(64);
    let (_, one) = run(&g, &hw1(), ScheduleMode::Chained);
    let (_, four) = run(&g, &HardwareConfig::default(), ScheduleMode::Chained);
    assert_eq!(four.ddr_bytes, 4 * one.ddr_bytes);
    assert!((four.runtime_s - 4.0 * one.runtime_s).abs() < 1e-12);
    assert!((four.bandwidth_gbps - one.bandwidth_gbps).abs() < 1e-9);
}

#[test]
fn demo_ordering() {
    let g = demo(512);
    let hw = HardwareConfig::default();
    let (_, naive) = run(&g, &hw, ScheduleMode::Naive);
    let (_, chained) = run(&g, &hw, ScheduleMode::Chained);
    assert!(chained.runtime_s < naive.runtime_s);
    assert!(chained.ddr_bytes < naive.ddr_bytes);
    assert!(chained.footprint_mb < naive.footprint_mb);
    assert!(chained.utilization > naive.utilization);

    let mut qa = QAssignment::default();
    for name in chained.tensor_traffic.keys() {
        qa.feature_maps.insert(name.clone(), enf_core::quant::QSpec { bits: 8, frac_bits: 4 });
    }
    let mixed = simulate(&build_schedule(&g, &hw, &qa, ScheduleMode::Chained).unwrap(), &hw);
    assert!(mixed.ddr_bytes < chained.ddr_bytes);
    assert!(mixed.footprint_mb < chained.footprint_mb);
}

#[test]
fn schedule_round_trips_through_json() {
    let (s, _) = run(&demo(64), &hw1(), ScheduleMode::Chained);
    let back: Schedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[derive(Clone, Debug)]
enum Block {
    Conv { ch: usize, k: usize, stride: usize },
    Bn,
    Relu,
    Up { ch: usize },
    Residual,
    Branch { ch: usize },
    Tap,
}

fn block() -> impl Strategy<Value = Block> {
    prop_oneof![
        (1usize..40, prop::sample::select(vec![1usize, 3, 5]), 1usize..3).prop_map(|(ch, k, stride)| Block::Conv { ch, k, stride }),
        Just(Block::Bn),
        Just(Block::Relu),
        (1usize..20).prop_map(|ch| Block::Up { ch }),
        Just(Block::Residual),
        (1usize..20).prop_map(|ch| Block::Branch { ch }),
        Just(Block::Tap),
    ]
}

fn build(blocks: &[Block], size: usize, width: usize) -> Graph {
    let mut b = GraphBuilder::new();
    let y = b.input("y", TensorShape::new(1, size, size));
    let mut x = b.conv("stem", y, width, 3, 1);
    let mut taps = 0;
    for (i, blk) in blocks.iter().enumerate() {
        let name = format!("b{i}");
        let side = b.shape(x).height;
        x = match *blk {
            Block::Conv { ch, k, stride } => b.conv(&name, x, ch + width, k, if side > 4 { stride } else { 1 }),
            Block::Bn => b.batch_norm(&name, x),
            Block::Relu => b.relu(&name, x),
            Block::Up { ch } if side <= 32 => b.transposed_conv(&name, x, ch, 2, 2),
            Block::Up { ch } => b.conv(&name, x, ch, 1, 1),
            Block::Residual => {
                let ch = b.shape(x).channels;
                let r = b.conv(&format!("{name}_r"), x, ch, 3, 1);
                b.sum(&name, &[x, r])
            }
            Block::Branch { ch } => {
                let r = b.conv(&format!("{name}_r"), x, ch, 1, 1);
                b.concat(&name, &[r, x])
            }
            Block::Tap if taps < 2 => {
                let task = [Task::Detection, Task::Soiling][taps];
                taps += 1;
                let t = b.conv(&format!("{name}_t"), x, 2, 1, 1);
                b.head(&format!("{name}_head"), t, task);
                x
            }
            Block::Tap => x,
        };
    }
    b.head("out", x, Task::Segmentation);
    b.build().unwrap()
}

fn covered(s: &Schedule) -> Vec<enf_core::NodeId> {
    let mut ids: Vec<_> = s.nodes.iter().flat_map(|n| n.chain.iter().copied()).collect();
    ids.sort();
    ids
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn schedule_invariants(blocks in prop::collection::vec(block(), 1..8), size in prop::sample::select(vec![16usize, 64, 128]), sdram_kb in 16u64..2048) {
        let g = build(&blocks, size, 4);
        let hw = HardwareConfig { sdram_bytes: sdram_kb << 10, ..Default::default() };
        let qa = QAssignment::default();
        let naive = build_schedule(&g, &hw, &qa, ScheduleMode::Naive);
        let chained = build_schedule(&g, &hw, &qa, ScheduleMode::Chained);
        let (naive, chained) = match (naive, chained) {
            (Ok(n), Ok(c)) => (n, c),
            (Err(SimError::Infeasible { .. }), Err(SimError::Infeasible { .. })) => return Ok(()),
            other => panic!("modes disagree on feasibility: {other:?}"),
        };
        prop_assert_eq!(covered(&naive), covered(&chained));
        let ids: BTreeSet<_> = covered(&chained).into_iter().collect();
        prop_assert_eq!(ids.len(), covered(&chained).len(), "node scheduled twice");

        let rn = simulate(&naive, &hw);
        let rc = simulate(&chained, &hw);
        prop_assert!(rc.ddr_bytes <= rn.ddr_bytes);
        prop_assert!(rc.peak_ddr_bytes <= rn.peak_ddr_bytes);
        let lb = lower_bounds(&g, &hw, &qa).unwrap();
        for r in [&rn, &rc] {
            prop_assert!(r.runtime_s >= lb.compute_lb_s.max(lb.transfer_lb_s) * (1.0 - 1e-12));
            prop_assert!(r.utilization > 0.0 && r.utilization <= 1.0);
            prop_assert!(r.peak_ddr_bytes >= naive.weight_bytes + 4 * (naive.input_bytes + naive.output_bytes));
        }
        for n in &chained.nodes {
            for t in &n.tiles {
                prop_assert!(t.rows.iter().all(|r| r.n > 0));
            }
        }
    }

    #[test]
    fn widening_never_costs_less(blocks in prop::collection::vec(block(), 1..6), extra in 1usize..16) {
        let hw = HardwareConfig::default();
        let qa = QAssignment::default();
        let narrow = build(&blocks, 64, 4);
        let wide = build(&blocks, 64, 4 + extra);
        let sim = |g: &Graph, mode| simulate(&build_schedule(g, &hw, &qa, mode).unwrap(), &hw);
        let (a, b) = (sim(&narrow, ScheduleMode::Naive), sim(&wide, ScheduleMode::Naive));
        prop_assert!(b.cycles >= a.cycles);
        prop_assert!(b.ddr_bytes >= a.ddr_bytes);
        prop_assert!(b.peak_ddr_bytes >= a.peak_ddr_bytes);
        prop_assert!(b.runtime_s >= a.runtime_s);
        let (a, b) = (sim(&narrow, ScheduleMode::Chained), sim(&wide, ScheduleMode::Chained));
        prop_assert!(b.ddr_bytes >= a.ddr_bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn eight_bit_flips_never_cost_more(blocks in prop::collection::vec(block(), 1..8), flips in prop::collection::vec(any::<bool>(), 64)) {
        let g = build(&blocks, 64, 8);
        let hw = HardwareConfig::default();
        let sim = |qa: &QAssignment, mode| simulate(&build_schedule(&g, &hw, qa, mode).unwrap(), &hw);
        let mut qa = QAssignment::default();
        let mut prev = [sim(&qa, ScheduleMode::Naive), sim(&qa, ScheduleMode::Chained)];
        for (node, flip) in g.nodes().iter().zip(&flips) {
            if !flip {
                continue;
            }
            qa.feature_maps.insert(node.name.clone(), enf_core::quant::QSpec { bits: 8, frac_bits: 4 });
            let next = [sim(&qa, ScheduleMode::Naive), sim(&qa, ScheduleMode::Chained)];
            for (a, b) in prev.iter().zip(&next) {
                prop_assert!(b.ddr_bytes <= a.ddr_bytes);
                prop_assert!(b.peak_ddr_bytes <= a.peak_ddr_bytes);
            }
            prop_assert!(next[0].runtime_s <= prev[0].runtime_s);
            prev = next;
        }
    }

    #[test]
    fn bandwidth_times_runtime_is_traffic(blocks in prop::collection::vec(block(), 1..8), size in prop::sample::select(vec![16usize, 64])) {
        let g = build(&blocks, size, 4);
        let hw = HardwareConfig::default();
        for mode in [ScheduleMode::Naive, ScheduleMode::Chained] {
            let (_, r) = run(&g, &hw, mode);
            let bytes = r.bandwidth_gbps * 1e9 * r.runtime_s;
            prop_assert!((bytes - r.ddr_bytes as f64).abs() <= 1e-9 * r.ddr_bytes as f64, "{bytes} vs {}", r.ddr_bytes);
            let traffic: u64 = r.per_layer.iter().map(|l| l.ddr_bytes).sum::<u64>() * hw.cameras_per_frame as u64;
            prop_assert_eq!(traffic, r.ddr_bytes);
        }
    }
}
