#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, DetTargets, Sample, SOIL_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum DatasetError {
    #[error("image size {size} must be a positive multiple of 2, the detection grid {grid} and the soiling grid")]
    InvalidSize { size: usize, grid: usize },
    #[error("need at least 2 segmentation classes and 2 soiling classes")]
    TooFewClasses,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub image_size: usize,
    /// Segmentation classes including background; object classes are 1..n.
    pub n_classes: usize,
    /// Detection grid side.
    pub grid: usize,
    /// Soiling classes including clean (0).
    pub soil_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Fraction of a tile a blob must cover to mark the tile soiled.
    pub soil_threshold: f32,
}

impl DatasetSpec {
    pub fn new(seed: u64, n_samples: usize, image_size: usize, n_classes: usize) -> Self {
        DatasetSpec {
            seed,
            n_samples,
            image_size,
            n_classes,
            grid: image_size / 8,
            soil_classes: 2,
            min_objects: 1,
            max_objects: 5,
            soil_threshold: 0.3,
        }
    }

    fn check(&self) -> Result<(), DatasetError> {
        let s = self.image_size;
        let tile = 2 * SOIL_GRID;
        if s == 0 || self.grid == 0 || s % self.grid != 0 || s % tile != 0 {
            return Err(DatasetError::InvalidSize { size: s, grid: self.grid });
        }
        if self.n_classes < 2 || self.soil_classes < 2 {
            return Err(DatasetError::TooFewClasses);
        }
        Ok(())
    }
}

/// A soiling blob: an axis-aligned ellipse of one soiling class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoilBlob {
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
    pub class: u8,
}

impl SoilBlob {
    fn contains(&self, x: f32, y: f32) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// Deterministic dataset: sample `i` depends only on `(seed, i)`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>, DatasetError> {
    spec.check()?;
    Ok((0..spec.n_samples).map(|i| generate_sample(spec, i as u64)).collect())
}

/// Generate sample number `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &DatasetSpec, index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let s = spec.image_size;
    let sf = s as f32;

    let base = rng.random_range(0.25f32..0.55);
    let tint = rng.random_range(-0.05f32..0.05);
    let mut rgb = alloc::vec![[0.0f32; 3]; s * s];
    for (i, px) in rgb.iter_mut().enumerate() {
        let row = (i / s) as f32 / sf;
        let shade = base + 0.1 * row;
        let n = rng.random_range(-0.03f32..0.03);
        *px = [shade + n + tint, shade + n, shade + n - tint];
    }

    let mut seg = alloc::vec![0u8; s * s];
    let mut det = DetTargets::empty(spec.grid);
    let mut det_area = alloc::vec![0.0f32; spec.grid * spec.grid];
    let cell = sf / spec.grid as f32;
    let n_obj = rng.random_range(spec.min_objects..=spec.max_objects.max(spec.min_objects));
    for _ in 0..n_obj {
        let class = rng.random_range(1..spec.n_classes);
        let w = rng.random_range(sf / 8.0..sf / 3.0).floor();
        let h = rng.random_range(sf / 8.0..sf / 3.0).floor();
        let x0 = rng.random_range(0.0..(sf - w)).floor();
        let y0 = rng.random_range(0.0..(sf - h)).floor();
        let ellipse = rng.random_bool(0.5);
        let jitter = rng.random_range(-0.06f32..0.06);
        let color = class_color(class, spec.n_classes).map(|c| (c + jitter).clamp(0.0, 1.0));
        let (cx, cy) = (x0 + w / 2.0, y0 + h / 2.0);
        for r in y0 as usize..(y0 + h) as usize {
            for c in x0 as usize..(x0 + w) as usize {
                let inside = !ellipse || {
                    let dx = (c as f32 + 0.5 - cx) / (w / 2.0);
                    let dy = (r as f32 + 0.5 - cy) / (h / 2.0);
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    rgb[r * s + c] = color;
                    seg[r * s + c] = class as u8;
                }
            }
        }
        let col = ((cx / cell) as usize).min(spec.grid - 1);
        let row = ((cy / cell) as usize).min(spec.grid - 1);
        let k = row * spec.grid + col;
        if w * h > det_area[k] {
            det_area[k] = w * h;
            det.cells[k] = Some(Cell {
                class: class - 1,
                cx: cx / cell - col as f32,
                cy: cy / cell - row as f32,
                w: w / sf,
                h: h / sf,
            });
        }
    }

    let n_blobs = match rng.random_range(0..10) {
        0..=3 => 0,
        4..=7 => 1,
        _ => 2,
    };
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        blobs.push(SoilBlob {
            cx: rng.random_range(0.0..sf),
            cy: rng.random_range(0.0..sf),
            rx: rng.random_range(sf / 8.0..sf / 2.5),
            ry: rng.random_range(sf / 8.0..sf / 2.5),
            class: rng.random_range(1..spec.soil_classes) as u8,
        });
    }
    let mut soil_mask = alloc::vec![0u8; s * s];
    for b in &blobs {
        let (color, alpha) = soil_look(b.class);
        for r in 0..s {
            for c in 0..s {
                if b.contains(c as f32 + 0.5, r as f32 + 0.5) {
                    let px = &mut rgb[r * s + c];
                    for ch in 0..3 {
                        px[ch] = (1.0 - alpha) * px[ch] + alpha * color[ch];
                    }
                    soil_mask[r * s + c] = b.class;
                }
            }
        }
    }
    let soil = soil_tiles_from_mask(&soil_mask, s, spec.soil_classes, spec.soil_threshold);

    let (y, uv) = rgb_to_yuv420(&rgb, s);
    Sample { size: s, y, uv, det: Some(det), seg: Some(seg), soil: Some(soil) }
}

/// Tile labels from a per-pixel soiling mask: the soiling class covering the
/// largest share of the tile, if that share reaches `threshold`.
pub fn soil_tiles_from_mask(mask: &[u8], size: usize, classes: usize, threshold: f32) -> [u8; 16] {
    let t = size / SOIL_GRID;
    let mut out = [0u8; 16];
    let mut counts = alloc::vec![0usize; classes.max(2)];
    for tr in 0..SOIL_GRID {
        for tc in 0..SOIL_GRID {
            counts.iter_mut().for_each(|c| *c = 0);
            for r in tr * t..(tr + 1) * t {
                for c in tc * t..(tc + 1) * t {
                    let v = mask[r * size + c] as usize;
                    if v < counts.len() {
                        counts[v] += 1;
                    }
                }
            }
            let (best, n) = counts
                .iter()
                .enumerate()
                .skip(1)
                .fold((0, 0), |acc, (k, &n)| if n > acc.1 { (k, n) } else { acc });
            if best > 0 && n as f32 >= threshold * (t * t) as f32 {
                out[tr * SOIL_GRID + tc] = best as u8;
            }
        }
    }
    out
}

fn class_color(class: usize, n_classes: usize) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 6] = [
        [0.85, 0.15, 0.15],
        [0.15, 0.30, 0.90],
        [0.15, 0.80, 0.20],
        [0.90, 0.85, 0.10],
        [0.80, 0.20, 0.80],
        [0.10, 0.80, 0.85],
    ];
    if n_classes <= PALETTE.len() + 1 {
        return PALETTE[class - 1];
    }
    // evenly spaced hues for larger class sets
    let hue = (class - 1) as f32 / (n_classes - 1) as f32 * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.1 + 0.8 * r, 0.1 + 0.8 * g, 0.1 + 0.8 * b]
}

fn soil_look(class: u8) -> ([f32; 3], f32) {
    match class % 2 {
        1 => ([0.30, 0.22, 0.12], 0.75),
        _ => ([0.92, 0.92, 0.95], 0.55),
    }
}

/// BT.601 luma plus offset chroma, chroma averaged over 2x2 blocks.
fn rgb_to_yuv420(rgb: &[[f32; 3]], s: usize) -> (Vec<f32>, Vec<f32>) {
    let h = s / 2;
    let mut y = alloc::vec![0.0f32; s * s];
    let mut uv = alloc::vec![0.0f32; 2 * h * h];
    for r in 0..s {
        for c in 0..s {
            let [red, green, blue] = rgb[r * s + c];
            let luma = 0.299 * red + 0.587 * green + 0.114 * blue;
            y[r * s + c] = luma.clamp(0.0, 1.0);
            let u = (0.492 * (blue - luma) + 0.5).clamp(0.0, 1.0);
            let v = (0.877 * (red - luma) + 0.5).clamp(0.0, 1.0);
            let k = (r / 2) * h + c / 2;
            uv[k] += 0.25 * u;
            uv[h * h + k] += 0.25 * v;
        }
    }
    (y, uv)
}
