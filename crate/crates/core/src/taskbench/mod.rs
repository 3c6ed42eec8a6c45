//! Seeded synthetic multi-task data and task metrics.
//!
//! Scenes are flat-coloured geometric objects on a noisy background, so
//! segmentation masks and boxes are exact. Lens soiling is drawn as
//! semi-transparent blobs on top and summarized on a 4x4 tile grid.

mod metrics;
mod scene;

pub use metrics::{
    decode_detections, eval_detection, eval_segmentation, eval_soiling, geometric_mean, BBox, DetectionEval,
    Detection, GroundTruth, MetricsReport, SegAccumulator, SoilAccumulator, TaskEvaluator,
};
pub use scene::{generate_dataset, generate_sample, soil_tiles_from_mask, DatasetError, DatasetSpec, SoilBlob};

use alloc::vec::Vec;

/// Side of the soiling tile grid.
pub const SOIL_GRID: usize = 4;

/// One detection target cell: object class (0-based over object classes),
/// centre offset inside the cell and size relative to the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub class: usize,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetTargets {
    pub grid: usize,
    /// Row-major `grid * grid` cells.
    pub cells: Vec<Option<Cell>>,
}

impl DetTargets {
    pub fn empty(grid: usize) -> Self {
        DetTargets { grid, cells: alloc::vec![None; grid * grid] }
    }

    /// Boxes in pixel coordinates for an image of side `size`.
    pub fn boxes(&self, size: usize) -> Vec<(usize, BBox)> {
        let cell = size as f32 / self.grid as f32;
        let s = size as f32;
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                c.map(|c| {
                    let (row, col) = (i / self.grid, i % self.grid);
                    let cx = (col as f32 + c.cx) * cell;
                    let cy = (row as f32 + c.cy) * cell;
                    (c.class, BBox::from_center(cx, cy, c.w * s, c.h * s))
                })
            })
            .collect()
    }
}

/// One image with its (optional) per-task annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Side length of the square Y plane.
    pub size: usize,
    /// `[size * size]` luma in [0, 1].
    pub y: Vec<f32>,
    /// `[2, size/2, size/2]` chroma in [0, 1].
    pub uv: Vec<f32>,
    pub det: Option<DetTargets>,
    /// `[size * size]` class ids, 0 = background.
    pub seg: Option<Vec<u8>>,
    /// Row-major 4x4 soiling classes, 0 = clean.
    pub soil: Option<[u8; SOIL_GRID * SOIL_GRID]>,
}

impl Sample {
    /// Mirror left-right, including all annotations.
    pub fn flip_horizontal(&self) -> Sample {
        let s = self.size;
        let h = s / 2;
        let mut y = alloc::vec![0.0; s * s];
        for r in 0..s {
            for c in 0..s {
                y[r * s + c] = self.y[r * s + (s - 1 - c)];
            }
        }
        let mut uv = alloc::vec![0.0; 2 * h * h];
        for p in 0..2 {
            for r in 0..h {
                for c in 0..h {
                    uv[p * h * h + r * h + c] = self.uv[p * h * h + r * h + (h - 1 - c)];
                }
            }
        }
        let seg = self.seg.as_ref().map(|m| {
            let mut out = alloc::vec![0u8; s * s];
            for r in 0..s {
                for c in 0..s {
                    out[r * s + c] = m[r * s + (s - 1 - c)];
                }
            }
            out
        });
        let soil = self.soil.map(|t| {
            let mut out = [0u8; 16];
            for r in 0..SOIL_GRID {
                for c in 0..SOIL_GRID {
                    out[r * SOIL_GRID + c] = t[r * SOIL_GRID + (SOIL_GRID - 1 - c)];
                }
            }
            out
        });
        let det = self.det.as_ref().map(|d| {
            let g = d.grid;
            let mut out = DetTargets::empty(g);
            for r in 0..g {
                for c in 0..g {
                    // a centre offset of exactly 0 would mirror onto the next cell
                    out.cells[r * g + c] = d.cells[r * g + (g - 1 - c)].map(|cell| Cell {
                        cx: (1.0 - cell.cx).min(1.0 - f32::EPSILON),
                        ..cell
                    });
                }
            }
            out
        });
        Sample { size: s, y, uv, det, seg, soil }
    }

    /// Scale luma by `factor`, clamped to [0, 1]. Chroma is left alone.
    pub fn with_brightness(&self, factor: f32) -> Sample {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
        out
    }
}
