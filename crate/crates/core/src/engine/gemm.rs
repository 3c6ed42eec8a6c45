//! Small dense kernels. Row-major, accumulate into `c`.

use crate::Real;

const COL_BLOCK: usize = 256;

/// `c[m x n] += a[m x k] * b[k x n]`
pub fn gemm_nn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    rows4(m, n, k, |i, kk| a[i * k + kk], b, c);
}

/// `c[m x n] += a^T * b` with `a` stored `[k x m]`.
pub fn gemm_tn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    rows4(m, n, k, |i, kk| a[kk * m + i], b, c);
}

/// `c[m x n] += a * b^T` with `a` stored `[m x k]`, `b` stored `[n x k]`.
pub fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight independent partial sums (fixed order, so the
/// result is deterministic).
pub fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail += *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Shared driver: four rows of `c` are updated per pass over a row of `b`.
#[inline(always)]
fn rows4<T: Real, A: Fn(usize, usize) -> T>(m: usize, n: usize, k: usize, a: A, b: &[T], c: &mut [T]) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + COL_BLOCK).min(n);
            let (c0, c1, c2, c3) = (&mut c0[j0..j1], &mut c1[j0..j1], &mut c2[j0..j1], &mut c3[j0..j1]);
            for kk in 0..k {
                let (a0, a1, a2, a3) = (a(i, kk), a(i + 1, kk), a(i + 2, kk), a(i + 3, kk));
                let br = &b[kk * n + j0..kk * n + j1];
                for j in 0..br.len() {
                    let bv = br[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            j0 = j1;
        }
        i += 4;
    }
    while i < m {
        let cr = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a(i, kk);
            let br = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
        i += 1;
    }
}
