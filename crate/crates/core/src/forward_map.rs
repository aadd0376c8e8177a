//! The Krein mapping Θ and the kernels F^h, R_H and L_h built from an
//! accelerant.

use crate::block::{self, ZERO};
use crate::error::Result;
use crate::factorization::{solve_krein, solve_krein_refined};
use crate::fields::{
    assemble_potential, sharp, Accelerant, Kernel2D, Potential, StructuralConstants, Support, C64,
};
use crate::par;

const I: C64 = C64::new(0.0, 1.0);

/// r_h and r_{h♯} on the base grid, solved concurrently.
pub fn krein_pair(h: &Accelerant) -> Result<(Kernel2D, Kernel2D)> {
    let hs = sharp(h);
    let (a, b) = par::join(|| solve_krein(h), || solve_krein(&hs));
    Ok((a?, b?))
}

/// Θ(h) = [[0, i r_h(x,0)], [-i r_{h♯}(x,0), 0]].
///
/// Only the two Krein solves are run. A grid node where the truncated
/// operator is singular surfaces as `NotAccelerant`, but a singular point
/// strictly between nodes does not; run
/// [`is_accelerant`](crate::factorization::is_accelerant) first when the
/// input is not known to be an accelerant.
pub fn theta(h: &Accelerant) -> Result<Potential> {
    let (rh, rs) = krein_pair(h)?;
    let g = h.grid();
    let mut top = Vec::with_capacity(g.nodes() * h.r() * h.r());
    let mut bottom = Vec::with_capacity(top.capacity());
    for i in 0..g.nodes() {
        top.extend(rh.get(i, 0).iter().map(|z| I * z));
        bottom.extend(rs.get(i, 0).iter().map(|z| -I * z));
    }
    assemble_potential(h.r(), g, top, bottom)
}

/// Θ(h) read off as R_H(x,0)·B·J from the block Krein solve.
pub fn theta_via_r_h(h: &Accelerant) -> Result<Potential> {
    let rh = build_R_H(h)?;
    let r = h.r();
    let n = 2 * r;
    let sc = StructuralConstants::new(r);
    let bj = block::mul(n, &sc.b_block(), &sc.j_block());
    let g = h.grid();
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for i in 0..g.nodes() {
        let q = block::mul(n, rh.get(i, 0), &bj);
        for a in 0..r {
            for b in 0..r {
                top.push(q[a * n + r + b]);
            }
        }
        for a in 0..r {
            for b in 0..r {
                bottom.push(q[(r + a) * n + b]);
            }
        }
    }
    assemble_potential(r, g, top, bottom)
}

fn put(n: usize, r: usize, out: &mut [C64], row: usize, col: usize, src: &[C64], s: f64) {
    for a in 0..r {
        for b in 0..r {
            out[(row * r + a) * n + col * r + b] = src[a * r + b] * s;
        }
    }
}

/// F^h(x,t) = ½ [[h((x-t)/2), h((x+t)/2)], [h(-(x+t)/2), h(-(x-t)/2)]].
///
/// The arguments are multiples of 1/(2N), so every entry is a sample read.
/// When h jumps at 0 the diagonal blocks jump across x = t and the kernel
/// carries both sides.
#[allow(non_snake_case)]
pub fn build_F_h(h: &Accelerant) -> Kernel2D {
    let r = h.r();
    let n = 2 * r;
    let g = h.grid();
    let c = 2 * g.cells();
    let k = Kernel2D::from_rows(n, g, Support::Full, |i, j, out| {
        put(n, r, out, 0, 0, h.sample(c + i - j), 0.5);
        put(n, r, out, 0, 1, h.sample(c + i + j), 0.5);
        put(n, r, out, 1, 0, h.sample(c - i - j), 0.5);
        put(n, r, out, 1, 1, h.sample(c + j - i), 0.5);
    });
    if h.zero_limits().is_none() {
        return k;
    }
    let (hp, hm) = (h.plus_limit(), h.minus_limit());
    let nn = n * n;
    let mut lower = vec![ZERO; g.nodes() * nn];
    let mut upper = vec![ZERO; g.nodes() * nn];
    for i in 0..g.nodes() {
        let (tr, bl) = if i == 0 {
            (hp, hm)
        } else {
            (h.sample(c + 2 * i), h.sample(c - 2 * i))
        };
        let lo = &mut lower[i * nn..(i + 1) * nn];
        put(n, r, lo, 0, 0, hp, 0.5);
        put(n, r, lo, 0, 1, tr, 0.5);
        put(n, r, lo, 1, 0, bl, 0.5);
        put(n, r, lo, 1, 1, hm, 0.5);
        let up = &mut upper[i * nn..(i + 1) * nn];
        put(n, r, up, 0, 0, hm, 0.5);
        put(n, r, up, 0, 1, tr, 0.5);
        put(n, r, up, 1, 0, bl, 0.5);
        put(n, r, up, 1, 1, hp, 0.5);
    }
    k.with_sides(lower, upper)
        .expect("side buffers are sized from the grid")
}

fn block_diag(a: &Kernel2D, b: &Kernel2D) -> Kernel2D {
    let r = a.n();
    let n = 2 * r;
    Kernel2D::from_rows(n, a.grid(), Support::Lower, |i, j, out| {
        put(n, r, out, 0, 0, a.get(i, j), 1.0);
        put(n, r, out, 1, 1, b.get(i, j), 1.0);
    })
}

/// R_H = diag(r_h, r_{h♯}), the Krein resolvent of H = diag(h, h♯).
#[allow(non_snake_case)]
pub fn build_R_H(h: &Accelerant) -> Result<Kernel2D> {
    let (a, b) = krein_pair(h)?;
    Ok(block_diag(&a, &b))
}

/// R_H on the refined grid with 2N cells.
#[allow(non_snake_case)]
pub fn build_R_H_refined(h: &Accelerant) -> Result<Kernel2D> {
    let hs = sharp(h);
    let (a, b) = par::join(|| solve_krein_refined(h), || solve_krein_refined(&hs));
    Ok(block_diag(&a?, &b?))
}

/// L_h(x,t) = ½{R_H(x,(x+t)/2) + R_H(x,(x-t)/2)B}.
///
/// R_H is solved on the refined grid, where x_i is node 2i and the half
/// arguments are the nodes i+j and i-j.
#[allow(non_snake_case)]
pub fn build_L_h(h: &Accelerant) -> Result<Kernel2D> {
    let hs = sharp(h);
    let (a, b) = par::join(|| solve_krein_refined(h), || solve_krein_refined(&hs));
    let (a, b) = (a?, b?);
    let r = h.r();
    let n = 2 * r;
    Ok(Kernel2D::from_rows(n, h.grid(), Support::Lower, |i, j, out| {
        put(n, r, out, 0, 0, a.get(2 * i, i + j), 0.5);
        put(n, r, out, 0, 1, a.get(2 * i, i - j), 0.5);
        put(n, r, out, 1, 0, b.get(2 * i, i - j), 0.5);
        put(n, r, out, 1, 1, b.get(2 * i, i + j), 0.5);
    }))
}
