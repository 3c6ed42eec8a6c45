//! Per-sample convolution kernels built on im2col + GEMM.

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::Real;

/// Sliding-window geometry: an image `c x h x w` scanned by a `k x k` window
/// with stride and zero padding, producing an `oh x ow` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// `cols[(c, ky, kx), (oy, ox)] = img[c, oy*s + ky - p, ox*s + kx - p]`
pub fn im2col<T: Real>(img: &[T], g: &Geom, cols: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        *v = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
pub fn col2im<T: Real>(cols: &[T], g: &Geom, img: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of one sample. `g` describes the input; `out` is
/// `[out_ch, oh, ow]`, overwritten.
pub fn conv_forward<T: Real>(x: &[T], g: &Geom, weight: &[T], bias: &[T], out: &mut [T], scratch: &mut alloc::vec::Vec<T>) {
    let n = g.cols();
    let out_ch = bias.len();
    scratch.resize(g.rows() * n, T::zero());
    im2col(x, g, scratch);
    for (o, row) in out.chunks_exact_mut(n).enumerate().take(out_ch) {
        row.iter_mut().for_each(|v| *v = bias[o]);
    }
    gemm_nn(out_ch, n, g.rows(), weight, scratch, out);
}

/// Gradients of a convolution for one sample: accumulates into `dw`, `db`
/// and (when given) `dx`.
pub fn conv_backward<T: Real>(
    x: &[T],
    g: &Geom,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut alloc::vec::Vec<T>,
) {
    let n = g.cols();
    let out_ch = db.len();
    for (o, row) in dy.chunks_exact(n).enumerate() {
        db[o] += row.iter().fold(T::zero(), |a, &v| a + v);
    }
    scratch.resize(g.rows() * n, T::zero());
    im2col(x, g, scratch);
    gemm_nt(out_ch, g.rows(), n, dy, scratch, dw);
    if let Some(dx) = dx {
        scratch.iter_mut().for_each(|v| *v = T::zero());
        gemm_tn(g.rows(), n, out_ch, weight, dy, scratch);
        col2im(scratch, g, dx);
    }
}

/// Transposed convolution of one sample. Here `g` describes the *output*
/// image and the input `x` is `[in_ch, oh, ow]`; weights are
/// `[in_ch, out_ch, k, k]`.
pub fn tconv_forward<T: Real>(x: &[T], g: &Geom, in_ch: usize, weight: &[T], bias: &[T], out: &mut [T], scratch: &mut alloc::vec::Vec<T>) {
    let n = g.cols();
    scratch.clear();
    scratch.resize(g.rows() * n, T::zero());
    gemm_tn(g.rows(), n, in_ch, weight, x, scratch);
    let plane = g.h * g.w;
    for (o, p) in out.chunks_exact_mut(plane).enumerate() {
        p.iter_mut().for_each(|v| *v = bias[o]);
    }
    col2im(scratch, g, out);
}

pub fn tconv_backward<T: Real>(
    x: &[T],
    g: &Geom,
    in_ch: usize,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut alloc::vec::Vec<T>,
) {
    let n = g.cols();
    let plane = g.h * g.w;
    for (o, p) in dy.chunks_exact(plane).enumerate() {
        db[o] += p.iter().fold(T::zero(), |a, &v| a + v);
    }
    scratch.resize(g.rows() * n, T::zero());
    im2col(dy, g, scratch);
    gemm_nt(in_ch, g.rows(), n, x, scratch, dw);
    if let Some(dx) = dx {
        gemm_nn(in_ch, n, g.rows(), weight, scratch, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geom { c: 2, h: 5, w: 6, k: 3, s: 2, p: 1, oh: 3, ow: 3 };
        let img: Vec<f64> = (0..g.c * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_in: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = alloc::vec![0.0; g.rows() * g.cols()];
        im2col(&img, &g, &mut cols);
        let mut back = alloc::vec![0.0; img.len()];
        col2im(&cols_in, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&cols_in).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
