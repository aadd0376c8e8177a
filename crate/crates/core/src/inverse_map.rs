//! The inverse mapping Υ: transformation kernels P± and K_Q, the Volterra
//! resolvent L_Q, the product kernel F_Q and the extraction η.

use std::time::Instant;

use crate::block::{self, ONE, ZERO};
use crate::error::{Error, Result};
use crate::fields::{
    potential_adjoint, Accelerant, DiagnosticReport, GridSpec, Kernel2D, Potential, Side,
    StructuralConstants, Support, C64,
};
use crate::par;
use crate::quadops::{self, gp_norm, invert_identity_plus, kernel_from_volterra_op, volterra_op};

pub const PICARD_TOL: f64 = 1e-12;
pub const PICARD_MAX_ITER: usize = 60;

/// P⁺ and P⁻ on the grid of the potential they were solved for.
#[derive(Clone, Debug)]
pub struct PKernels {
    pub plus: Kernel2D,
    pub minus: Kernel2D,
    pub iterations: usize,
    pub last_change: f64,
}

/// Solves P⁺(x,t) = ∫ₜˣ JQ(s)P⁻(s,s-t)ds and
/// P⁻(x,t) = ∫ₜˣ JQ(s)P⁺(s,s-t)ds + JQ(t) by Picard iteration on the
/// grid of `q`.
///
/// Column t_b of both kernels is a cumulative trapezoid sum along
/// s = t_b..1, reading the previous iterate at (s, s - t_b), which is again
/// a node. Iteration stops once the largest entry change is at most `tol`.
#[allow(non_snake_case)]
pub fn solve_P_kernels(q: &Potential, tol: f64, max_iter: usize) -> Result<PKernels> {
    let g = q.grid();
    let n = 2 * q.r();
    let nn = n * n;
    let m = g.nodes();
    let d = g.step();
    let jq: Vec<Vec<C64>> = (0..m).map(|c| q.jq(c)).collect();
    let mut plus = Kernel2D::zeros(n, g, Support::Lower);
    let mut minus = Kernel2D::from_fn(n, g, Support::Lower, |_, b, out| {
        out.copy_from_slice(&jq[b])
    });
    let half = C64::new(0.5 * d, 0.0);
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let cols: Vec<(Vec<C64>, Vec<C64>)> = par::map(m, |b| {
            let len = m - b;
            let mut cp = vec![ZERO; len * nn];
            let mut cm = vec![ZERO; len * nn];
            let mut acc_p = block::zeros(n);
            let mut acc_m = block::zeros(n);
            let mut prev_p = block::zeros(n);
            let mut prev_m = block::zeros(n);
            for (t, c) in (b..m).enumerate() {
                let gp = block::mul(n, &jq[c], minus.get(c, c - b));
                let gm = block::mul(n, &jq[c], plus.get(c, c - b));
                if t > 0 {
                    block::axpy(&mut acc_p, half, &prev_p);
                    block::axpy(&mut acc_p, half, &gp);
                    block::axpy(&mut acc_m, half, &prev_m);
                    block::axpy(&mut acc_m, half, &gm);
                }
                cp[t * nn..(t + 1) * nn].copy_from_slice(&acc_p);
                let dst = &mut cm[t * nn..(t + 1) * nn];
                dst.copy_from_slice(&acc_m);
                block::axpy(dst, ONE, &jq[b]);
                prev_p = gp;
                prev_m = gm;
            }
            (cp, cm)
        });
        let mut next_p = Kernel2D::zeros(n, g, Support::Lower);
        let mut next_m = Kernel2D::zeros(n, g, Support::Lower);
        change = 0.0;
        for (b, (cp, cm)) in cols.iter().enumerate() {
            for (t, c) in (b..m).enumerate() {
                let (np, nm) = (&cp[t * nn..(t + 1) * nn], &cm[t * nn..(t + 1) * nn]);
                change = change
                    .max(block::max_abs(&block::sub(np, plus.get(c, b))))
                    .max(block::max_abs(&block::sub(nm, minus.get(c, b))));
                next_p.get_mut(c, b).copy_from_slice(np);
                next_m.get_mut(c, b).copy_from_slice(nm);
            }
        }
        plus = next_p;
        minus = next_m;
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            return Ok(PKernels {
                plus,
                minus,
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_change: change,
    })
}

/// gp_1 norms of P⁺J - JP⁺ and P⁻J + JP⁻; both vanish in the continuum.
pub fn p_symmetry_residuals(p: &PKernels) -> (f64, f64) {
    let n = p.plus.n();
    let j = StructuralConstants::new(n / 2).j_block();
    let comm = |k: &Kernel2D, s: f64| {
        k.map_blocks(|b| {
            let mut x = block::mul(n, b, &j);
            block::axpy(&mut x, C64::new(s, 0.0), &block::mul(n, &j, b));
            x
        })
    };
    (
        gp_norm(&comm(&p.plus, -1.0), 1.0),
        gp_norm(&comm(&p.minus, 1.0), 1.0),
    )
}

/// K_Q(x,t) = ½{P⁺(x,(x-t)/2) + P⁺(x,(x+t)/2)B + P⁻(x,(x-t)/2)B + P⁻(x,(x+t)/2)}
/// from P± solved on the refined grid of `base`.
#[allow(non_snake_case)]
pub fn build_K_from(p: &PKernels, base: GridSpec) -> Result<Kernel2D> {
    if p.plus.grid() != base.refined() {
        return Err(Error::Shape("P kernels must live on the refined grid".into()));
    }
    let n = p.plus.n();
    let r = n / 2;
    let tb = |x: &[C64]| crate::fields::times_b(r, x);
    Ok(Kernel2D::from_rows(n, base, Support::Lower, |i, j, out| {
        let (a, lo, hi) = (2 * i, i - j, i + j);
        let mut s = p.plus.get(a, lo).to_vec();
        block::axpy(&mut s, ONE, &tb(p.plus.get(a, hi)));
        block::axpy(&mut s, ONE, &tb(p.minus.get(a, lo)));
        block::axpy(&mut s, ONE, p.minus.get(a, hi));
        for (o, v) in out.iter_mut().zip(s) {
            *o = 0.5 * v;
        }
    }))
}

/// K_Q on the grid of `q`.
#[allow(non_snake_case)]
pub fn build_K(q: &Potential) -> Result<Kernel2D> {
    let p = solve_P_kernels(&q.refined(), PICARD_TOL, PICARD_MAX_ITER)?;
    build_K_from(&p, q.grid())
}

/// L = (I + K)⁻¹ - I for a lower kernel, in the Volterra algebra of
/// [`volterra_op`]; applying it twice returns K.
pub fn resolvent_volterra(k: &Kernel2D) -> Result<Kernel2D> {
    kernel_from_volterra_op(&invert_identity_plus(&volterra_op(k)?)?)
}

/// (I + L)(I + L_*^*) - I as a kernel:
/// F(x,t) = L(x,t) + L_*(t,x)ᴴ + ∫₀^{min(x,t)} L(x,s)L_*(t,s)ᴴ ds.
///
/// Both factors are triangular, so the two diagonal sides come from
/// different terms and are stored separately.
#[allow(non_snake_case)]
pub fn build_F_from(l: &Kernel2D, l_star: &Kernel2D) -> Kernel2D {
    let n = l.n();
    let g = l.grid();
    let h = g.step();
    let product = |i: usize, j: usize| {
        let m = i.min(j);
        let w = crate::fields::trapezoid(m, h);
        let mut acc = block::zeros(n);
        for s in 0..=m {
            if w[s] != 0.0 {
                block::gemm_acc_adj(n, &mut acc, C64::new(w[s], 0.0), l.get(i, s), l_star.get(j, s));
            }
        }
        acc
    };
    let lower_at = |i: usize, j: usize| {
        let mut v = product(i, j);
        block::axpy(&mut v, ONE, l.get(i, j));
        v
    };
    let upper_at = |i: usize, j: usize| {
        let mut v = product(i, j);
        block::axpy(&mut v, ONE, &block::adjoint(n, l_star.get(j, i)));
        v
    };
    let f = Kernel2D::from_rows(n, g, Support::Full, |i, j, out| {
        if j < i {
            out.copy_from_slice(&lower_at(i, j));
        } else if j > i {
            out.copy_from_slice(&upper_at(i, j));
        }
    });
    let lower: Vec<C64> = (0..g.nodes()).flat_map(|i| lower_at(i, i)).collect();
    let upper: Vec<C64> = (0..g.nodes()).flat_map(|i| upper_at(i, i)).collect();
    f.with_sides(lower, upper)
        .expect("side buffers are sized from the grid")
}

/// Every intermediate of Υ for one potential.
#[derive(Clone, Debug)]
pub struct InverseParts {
    pub p: PKernels,
    pub k: Kernel2D,
    pub l: Kernel2D,
    pub p_star: PKernels,
    pub k_star: Kernel2D,
    pub l_star: Kernel2D,
    pub f: Kernel2D,
}

fn kernels_for(q: &Potential, tol: f64, max_iter: usize) -> Result<(PKernels, Kernel2D, Kernel2D)> {
    let p = solve_P_kernels(&q.refined(), tol, max_iter)?;
    let k = build_K_from(&p, q.grid())?;
    let l = resolvent_volterra(&k)?;
    Ok((p, k, l))
}

pub fn inverse_parts(q: &Potential, tol: f64, max_iter: usize) -> Result<InverseParts> {
    let qs = potential_adjoint(q);
    let (a, b) = par::join(|| kernels_for(q, tol, max_iter), || kernels_for(&qs, tol, max_iter));
    let ((p, k, l), (p_star, k_star, l_star)) = (a?, b?);
    let f = build_F_from(&l, &l_star);
    Ok(InverseParts {
        p,
        k,
        l,
        p_star,
        k_star,
        l_star,
        f,
    })
}

/// F_Q = (I + K_Q)⁻¹(I + K*_{Q*})⁻¹ - I.
#[allow(non_snake_case)]
pub fn build_F_Q(q: &Potential) -> Result<Kernel2D> {
    Ok(inverse_parts(q, PICARD_TOL, PICARD_MAX_ITER)?.f)
}

fn sub_block(f: &[C64], n: usize, r: usize, row: usize, col: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(r * r);
    for a in 0..r {
        for b in 0..r {
            out.push(f[(row * r + a) * n + col * r + b]);
        }
    }
    out
}

fn check_square_blocks(f: &Kernel2D) -> usize {
    assert!(f.n().is_multiple_of(2), "η needs a kernel with block size 2r");
    f.n() / 2
}

/// η read along t = 1, with the factor 2 that undoes the ½ in F^h:
/// h(ξ) = 2F₂₁(-2ξ-1, 1), 2F₁₁(2ξ+1, 1), 2F₂₂(1-2ξ, 1), 2F₁₂(2ξ-1, 1) on the
/// four quarters of [-1, 1].
pub fn eta_boundary(f: &Kernel2D) -> Accelerant {
    let r = check_square_blocks(f);
    let n = f.n();
    let g = f.grid();
    let big_n = g.cells();
    let mut values = Vec::with_capacity((4 * big_n + 1) * r * r);
    for k in 0..=4 * big_n {
        let (i, row, col) = if k <= big_n {
            (big_n - k, 1, 0)
        } else if k <= 2 * big_n {
            (k - big_n, 0, 0)
        } else if k <= 3 * big_n {
            (3 * big_n - k, 1, 1)
        } else {
            (k - 3 * big_n, 0, 1)
        };
        values.extend(sub_block(f.get(i, big_n), n, r, row, col).iter().map(|z| 2.0 * z));
    }
    let h = Accelerant::new(r, g, values).expect("sizes follow from the kernel");
    if f.sides().is_none() {
        return h;
    }
    let up = f.side(big_n, big_n, Side::Upper);
    let plus: Vec<C64> = sub_block(up, n, r, 1, 1).iter().map(|z| 2.0 * z).collect();
    let minus: Vec<C64> = sub_block(up, n, r, 0, 0).iter().map(|z| 2.0 * z).collect();
    h.with_zero_limits(plus, minus)
        .expect("limits are finite r×r blocks")
}

/// η by averaging along characteristics: h(ξ) is twice the mean of every
/// node value of F₁₁ on (x-t)/2 = ξ, F₂₂ on (t-x)/2 = ξ, F₁₂ on
/// (x+t)/2 = ξ > 0 and F₂₁ on -(x+t)/2 = ξ < 0.
pub fn eta_characteristic(f: &Kernel2D) -> Accelerant {
    let r = check_square_blocks(f);
    let n = f.n();
    let rr = r * r;
    let g = f.grid();
    let big_n = g.cells() as isize;
    let nodes = g.nodes() as isize;
    let samples: Vec<Vec<C64>> = par::map((4 * big_n + 1) as usize, |k| {
        let m = k as isize - 2 * big_n;
        let mut sum = vec![ZERO; rr];
        let mut count = 0usize;
        let mut add = |i: isize, j: isize, row: usize, col: usize| {
            if (0..nodes).contains(&i) && (0..nodes).contains(&j) {
                let b = sub_block(f.get(i as usize, j as usize), n, r, row, col);
                block::axpy(&mut sum, ONE, &b);
                count += 1;
            }
        };
        if m.abs() <= big_n {
            for j in 0..nodes {
                add(j + m, j, 0, 0);
                add(j - m, j, 1, 1);
            }
        }
        if m > 0 {
            for i in 0..nodes {
                add(i, m - i, 0, 1);
            }
        }
        if m < 0 {
            for i in 0..nodes {
                add(i, -m - i, 1, 0);
            }
        }
        let s = 2.0 / count as f64;
        sum.iter().map(|z| z * s).collect()
    });
    let h = Accelerant::new(r, g, samples.concat()).expect("sizes follow from the kernel");
    if f.sides().is_none() {
        return h;
    }
    // h(0+) sits on the lower side of F₁₁ and the upper side of F₂₂.
    let mut plus = vec![ZERO; rr];
    let mut minus = vec![ZERO; rr];
    for i in 0..g.nodes() {
        let (lo, up) = (f.side(i, i, Side::Lower), f.side(i, i, Side::Upper));
        block::axpy(&mut plus, ONE, &sub_block(lo, n, r, 0, 0));
        block::axpy(&mut plus, ONE, &sub_block(up, n, r, 1, 1));
        block::axpy(&mut minus, ONE, &sub_block(up, n, r, 0, 0));
        block::axpy(&mut minus, ONE, &sub_block(lo, n, r, 1, 1));
    }
    let s = 1.0 / g.nodes() as f64;
    for z in plus.iter_mut().chain(minus.iter_mut()) {
        *z *= s;
    }
    h.with_zero_limits(plus, minus)
        .expect("limits are finite r×r blocks")
}

/// Sup-norm distance between two accelerants on the same grid.
pub fn accelerant_sup_distance(a: &Accelerant, b: &Accelerant) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

/// Υ(Q) = η(F_Q), with a report holding the η spread and Picard counts.
pub fn upsilon(q: &Potential) -> Result<(Accelerant, DiagnosticReport)> {
    upsilon_with(q, PICARD_TOL, PICARD_MAX_ITER)
}

pub fn upsilon_with(
    q: &Potential,
    tol: f64,
    max_iter: usize,
) -> Result<(Accelerant, DiagnosticReport)> {
    let start = Instant::now();
    let parts = inverse_parts(q, tol, max_iter)?;
    let h = eta_characteristic(&parts.f);
    let hb = eta_boundary(&parts.f);
    let mut report = DiagnosticReport::new(q.grid().cells());
    report.info("eta_spread", accelerant_sup_distance(&h, &hb));
    report.info("picard_iterations", parts.p.iterations as f64);
    report.info("picard_iterations_adjoint", parts.p_star.iterations as f64);
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok((h, report))
}

/// Both reciprocity residuals of (K, resolvent_volterra(K)).
pub fn reciprocity(k: &Kernel2D) -> Result<(f64, f64)> {
    quadops::reciprocity_residuals(k, &resolvent_volterra(k)?)
}
