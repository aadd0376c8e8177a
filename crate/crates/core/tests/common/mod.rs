#![allow(dead_code)]

use kreinmap_core::quadops::gp_norm;
use kreinmap_core::{Accelerant, GridSpec, Kernel2D, Support, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn grid(n: usize) -> GridSpec {
    GridSpec::new(n).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_c(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random kernel with every in-support block drawn independently, rescaled
/// to the given gp_1 norm.
pub fn random_kernel(rng: &mut ChaCha8Rng, n: usize, g: GridSpec, support: Support, norm: f64) -> Kernel2D {
    let m = g.nodes();
    let vals: Vec<C64> = (0..m * m * n * n).map(|_| random_c(rng)).collect();
    let k = Kernel2D::from_fn(n, g, support, |i, j, b| {
        let o = (i * m + j) * n * n;
        b.copy_from_slice(&vals[o..o + n * n]);
    });
    let s = norm / gp_norm(&k, 1.0);
    k.map_blocks(|b| b.iter().map(|z| z * s).collect())
}

pub fn random_accelerant(rng: &mut ChaCha8Rng, r: usize, g: GridSpec, scale: f64) -> Accelerant {
    let len = (4 * g.cells() + 1) * r * r;
    let v = (0..len).map(|_| random_c(rng) * scale).collect();
    Accelerant::new(r, g, v).unwrap()
}

/// Smooth random accelerant: a few low modes with random matrix coefficients.
pub fn smooth_accelerant(rng: &mut ChaCha8Rng, r: usize, g: GridSpec, scale: f64) -> Accelerant {
    let coef: Vec<Vec<C64>> = (0..3)
        .map(|_| (0..r * r).map(|_| random_c(rng) * scale).collect())
        .collect();
    Accelerant::from_fn(r, g, |x| {
        (0..r * r)
            .map(|a| coef[0][a] + coef[1][a] * x + coef[2][a] * (2.0 * x * x - 1.0))
            .collect()
    })
    .unwrap()
}

/// Trapezoid weights on [0, x_i] for a grid of step h.
pub fn trap(i: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; i + 1];
    if i == 0 {
        w[0] = 0.0;
    } else {
        w[0] = h / 2.0;
        w[i] = h / 2.0;
    }
    w
}

/// Nyström matrix with triangle diagonal weight h/2 and w_j elsewhere.
pub fn nystrom(k: &Kernel2D) -> DMatrix<C64> {
    let g = k.grid();
    let n = k.n();
    let m = g.nodes();
    let h = g.step();
    let w = g.weights();
    DMatrix::from_fn(m * n, m * n, |a, b| {
        let (i, j) = (a / n, b / n);
        let wt = match k.support() {
            Support::Full => w[j],
            _ if i == j => h / 2.0,
            _ => w[j],
        };
        c(wt) * k.get(i, j)[(a % n) * n + b % n]
    })
}

pub fn block_of(m: &DMatrix<C64>, n: usize, i: usize, j: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = m[(i * n + a, j * n + b)];
        }
    }
    out
}

pub fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Row-by-row dense solve of X(x,t) + F(x,t) + ∫₀ˣ X(x,s)F(s,t) ds = 0.
pub fn dense_glm(f: &Kernel2D) -> Kernel2D {
    let g = f.grid();
    let n = f.n();
    let h = g.step();
    let mut out = Kernel2D::zeros(n, g, Support::Lower);
    for i in 0..g.nodes() {
        let w = trap(i, h);
        let d = (i + 1) * n;
        // X_row · (I + Ω F_sub) = -F_row, solved in transposed form.
        let a = DMatrix::from_fn(d, d, |p, q| {
            let (s, j) = (p / n, q / n);
            let id = if p == q { c(1.0) } else { c(0.0) };
            id + c(w[s]) * f.get(s, j)[(p % n) * n + q % n]
        });
        let rhs = DMatrix::from_fn(n, d, |p, q| -f.get(i, q / n)[p * n + q % n]);
        let x = a.transpose().lu().solve(&rhs.transpose()).unwrap().transpose();
        for j in 0..=i {
            let b = out.get_mut(i, j);
            for p in 0..n {
                for q in 0..n {
                    b[p * n + q] = x[(p, j * n + q)];
                }
            }
        }
    }
    out
}

/// L₊ from `dense_glm`, and L₋ from the dense inverse of (I + L₊)(I + F).
/// Entries of that inverse below the block diagonal must vanish.
pub fn dense_factors(f: &Kernel2D) -> (Kernel2D, Kernel2D) {
    let g = f.grid();
    let n = f.n();
    let d = g.nodes() * n;
    let l_plus = dense_glm(f);
    let id = DMatrix::<C64>::identity(d, d);
    let upper = (&id + nystrom(&l_plus)) * (&id + nystrom(f));
    let inv = upper.lu().try_inverse().unwrap() - &id;
    let (h, w) = (g.step(), g.weights());
    let l_minus = Kernel2D::from_fn(n, g, Support::Upper, |i, j, b| {
        let wt = if i == j { h / 2.0 } else { w[j] };
        for (v, z) in b.iter_mut().zip(block_of(&inv, n, i, j)) {
            *v = z / wt;
        }
    });
    for i in 0..g.nodes() {
        for j in 0..i {
            assert!(block_of(&inv, n, i, j).iter().all(|z| z.norm() < 1e-10));
        }
    }
    (l_plus, l_minus)
}
