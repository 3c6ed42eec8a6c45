//! CSV tables and the PGM dataset dump.

use std::fs;
use std::io::Write;
use std::path::Path;

use enf_core::engine::History;
use enf_core::prune::TraceStep;
use enf_core::socsim::{ExecMode, LayerReport};
use enf_core::taskbench::{MetricsReport, Sample};
use serde::Serialize;

use crate::error::CliError;

#[derive(Serialize)]
pub struct HistoryRow {
    /// Prune step the fine-tune followed (0 for base training).
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub det_loss: f64,
    pub seg_loss: f64,
    pub soil_loss: f64,
    pub det_map: Option<f64>,
    pub seg_miou: Option<f64>,
    pub soil_f1: Option<f64>,
    pub geo_mean: Option<f64>,
}

impl HistoryRow {
    pub fn rows(step: usize, history: &History) -> impl Iterator<Item = HistoryRow> + '_ {
        history.epochs.iter().map(move |e| HistoryRow {
            step,
            epoch: e.epoch,
            loss: e.loss,
            det_loss: e.per_task[0],
            seg_loss: e.per_task[1],
            soil_loss: e.per_task[2],
            det_map: e.metrics.map(|m| m.det_map),
            seg_miou: e.metrics.map(|m| m.seg_miou),
            soil_f1: e.metrics.map(|m| m.soil_f1),
            geo_mean: e.metrics.map(|m| m.geo_mean),
        })
    }
}

#[derive(Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub flops: u64,
    pub params: u64,
    pub filters_removed: usize,
    pub det_map: Option<f64>,
    pub seg_miou: Option<f64>,
    pub soil_f1: Option<f64>,
    pub geo_mean: Option<f64>,
}

impl From<&TraceStep> for TraceRow {
    fn from(s: &TraceStep) -> Self {
        let m: Option<MetricsReport> = s.metrics;
        TraceRow {
            step: s.step,
            flops: s.flops,
            params: s.params,
            filters_removed: s.filters_removed,
            det_map: m.map(|m| m.det_map),
            seg_miou: m.map(|m| m.seg_miou),
            soil_f1: m.map(|m| m.soil_f1),
            geo_mean: m.map(|m| m.geo_mean),
        }
    }
}

#[derive(Serialize)]
pub struct LayerRow<'a> {
    pub name: &'a str,
    pub mode: ExecMode,
    pub cycles: u64,
    pub core_runs: u64,
    pub ddr_bytes: u64,
    pub time_us: f64,
}

impl<'a> From<&'a LayerReport> for LayerRow<'a> {
    fn from(l: &'a LayerReport) -> Self {
        LayerRow { name: &l.name, mode: l.mode, cycles: l.cycles, core_runs: l.core_runs, ddr_bytes: l.ddr_bytes, time_us: l.time_s * 1e6 }
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary (P5) 8-bit greymap.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Plain (P2) greymap, used for label maps so they stay human-readable.
pub fn pgm_plain(width: usize, height: usize, maxval: u8, pixels: &[u8]) -> String {
    let mut out = format!("P2\n{width} {height}\n{maxval}\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Write `<stem>_y.pgm`, `<stem>_u.pgm`, `<stem>_v.pgm` and the label files
/// `<stem>_det.txt` (`class x0 y0 x1 y1` per line), `<stem>_seg.pgm`
/// and `<stem>_soil.txt` (4x4 grid).
pub fn export_sample(dir: &Path, stem: &str, s: &Sample, seg_classes: usize) -> Result<(), CliError> {
    let write = |name: String, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    };
    let y: Vec<u8> = s.y.iter().map(|&v| to_u8(v)).collect();
    write(format!("{stem}_y.pgm"), &pgm_bytes(s.size, s.size, &y))?;
    let half = s.size / 2;
    for (i, plane) in ["u", "v"].into_iter().enumerate() {
        let px: Vec<u8> = s.uv[i * half * half..(i + 1) * half * half].iter().map(|&v| to_u8(v)).collect();
        write(format!("{stem}_{plane}.pgm"), &pgm_bytes(half, half, &px))?;
    }
    if let Some(det) = &s.det {
        let mut text = String::new();
        for (class, b) in det.boxes(s.size) {
            text.push_str(&format!("{class} {:.2} {:.2} {:.2} {:.2}\n", b.x0, b.y0, b.x1, b.y1));
        }
        write(format!("{stem}_det.txt"), text.as_bytes())?;
    }
    if let Some(seg) = &s.seg {
        let maxval = seg_classes.saturating_sub(1).max(1) as u8;
        write(format!("{stem}_seg.pgm"), pgm_plain(s.size, s.size, maxval, seg).as_bytes())?;
    }
    if let Some(soil) = &s.soil {
        let mut f = Vec::new();
        for row in soil.chunks(4) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(f, "{}", line.join(" ")).expect("write to vec");
        }
        write(format!("{stem}_soil.txt"), &f)?;
    }
    Ok(())
}
