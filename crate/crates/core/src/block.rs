//! Small dense complex blocks (n×n, row-major, flat slices).
//!
//! Kernels store O(N²) blocks of size 1..4, so these helpers avoid the
//! per-block allocation a general matrix type would need.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn zeros(n: usize) -> Vec<C64> {
    vec![ZERO; n * n]
}

pub fn identity(n: usize) -> Vec<C64> {
    let mut m = zeros(n);
    for a in 0..n {
        m[a * n + a] = ONE;
    }
    m
}

/// `out += alpha * a * b`
#[inline]
pub fn gemm_acc(n: usize, out: &mut [C64], alpha: C64, a: &[C64], b: &[C64]) {
    match n {
        1 => out[0] += alpha * a[0] * b[0],
        2 => {
            out[0] += alpha * (a[0] * b[0] + a[1] * b[2]);
            out[1] += alpha * (a[0] * b[1] + a[1] * b[3]);
            out[2] += alpha * (a[2] * b[0] + a[3] * b[2]);
            out[3] += alpha * (a[2] * b[1] + a[3] * b[3]);
        }
        _ => {
            for i in 0..n {
                for k in 0..n {
                    let aik = alpha * a[i * n + k];
                    if aik == ZERO {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aik * b[k * n + j];
                    }
                }
            }
        }
    }
}

/// `out += alpha * a * bᴴ`
#[inline]
pub fn gemm_acc_adj(n: usize, out: &mut [C64], alpha: C64, a: &[C64], b: &[C64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = ZERO;
            for k in 0..n {
                s += a[i * n + k] * b[j * n + k].conj();
            }
            out[i * n + j] += alpha * s;
        }
    }
}

pub fn mul(n: usize, a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = zeros(n);
    gemm_acc(n, &mut out, ONE, a, b);
    out
}

pub fn adjoint(n: usize, a: &[C64]) -> Vec<C64> {
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

/// `a += s * b`
#[inline]
pub fn axpy(a: &mut [C64], s: C64, b: &[C64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

pub fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

pub fn to_dmatrix(n: usize, a: &[C64]) -> DMatrix<C64> {
    DMatrix::from_row_slice(n, n, a)
}

pub fn from_dmatrix(m: &DMatrix<C64>) -> Vec<C64> {
    let n = m.nrows();
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
    out
}

pub fn inverse(n: usize, a: &[C64]) -> Option<Vec<C64>> {
    match n {
        1 => {
            if a[0] == ZERO {
                None
            } else {
                Some(vec![ONE / a[0]])
            }
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if det == ZERO || !det.is_finite() {
                return None;
            }
            let d = ONE / det;
            Some(vec![a[3] * d, -a[1] * d, -a[2] * d, a[0] * d])
        }
        _ => to_dmatrix(n, a)
            .try_inverse()
            .map(|m| from_dmatrix(&m)),
    }
}

pub fn max_abs(a: &[C64]) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn frobenius(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn norm2(n: usize, a: &[C64]) -> f64 {
    match n {
        1 => a[0].norm(),
        2 => {
            let f2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            let det = (a[0] * a[3] - a[1] * a[2]).norm();
            let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
            ((f2 + disc) / 2.0).sqrt()
        }
        _ => to_dmatrix(n, a).singular_values().max(),
    }
}

/// Smallest and largest singular values.
pub fn sigma_range(n: usize, a: &[C64]) -> (f64, f64) {
    match n {
        1 => (a[0].norm(), a[0].norm()),
        _ => {
            let s = to_dmatrix(n, a).singular_values();
            (s.min(), s.max())
        }
    }
}
