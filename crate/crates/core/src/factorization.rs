//! The accelerant test, the GLM/Krein equation and triangular factorization
//! of I + F.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::block::{self, ONE, ZERO};
use crate::error::{Error, Result};
use crate::fields::{Accelerant, GridSpec, Kernel2D, Side, Support, C64};
use crate::par;
use crate::quadops::{self, DiscOp};

/// Matrix of h(x_i - x_j) on the grid with `cells` cells (N or 2N).
/// Carries the one-sided values h(0±) on the diagonal when h has them.
pub fn convolution_kernel_on(h: &Accelerant, cells: usize) -> Result<Kernel2D> {
    let n2 = 2 * h.grid().cells();
    if cells == 0 || !n2.is_multiple_of(cells) {
        return Err(Error::Invalid(format!(
            "grid with {cells} cells does not align with the accelerant samples"
        )));
    }
    let stride = (n2 / cells) as isize;
    let grid = GridSpec::new(cells)?;
    let k = Kernel2D::from_rows(h.r(), grid, Support::Full, |i, j, out| {
        let idx = n2 as isize + stride * (i as isize - j as isize);
        out.copy_from_slice(h.sample(idx as usize));
    });
    if h.zero_limits().is_some() {
        let lower: Vec<C64> = (0..grid.nodes()).flat_map(|_| h.plus_limit().to_vec()).collect();
        let upper: Vec<C64> = (0..grid.nodes()).flat_map(|_| h.minus_limit().to_vec()).collect();
        return k.with_sides(lower, upper);
    }
    Ok(k)
}

/// F(x_i, x_j) = h(x_i - x_j) on the accelerant's own grid.
pub fn convolution_kernel(h: &Accelerant) -> Kernel2D {
    convolution_kernel_on(h, h.grid().cells()).expect("native grid always aligns")
}

#[derive(Clone, Debug, Serialize)]
pub struct AcceleratorMargin {
    pub alpha: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AccelerantReport {
    pub accepted: bool,
    pub min_singular_value: f64,
    /// α of the smallest margin, or of a determinant sign change between nodes.
    pub worst_alpha: f64,
    /// Set when the determinant passes through zero between two nodes.
    pub crossing_alpha: Option<f64>,
    pub margins: Vec<AcceleratorMargin>,
}

/// Sweeps α = x_1..x_N and measures how far I + 𝓗P_α is from singular.
///
/// Each step uses the symmetrized matrix I + W^{1/2} H W^{1/2} (similar to
/// the Nyström matrix of I + 𝓗P_α). A node is rejected when its smallest
/// singular value is at most `tol` times its largest. The determinant phase
/// is tracked too: a jump beyond π/2 between neighbouring nodes means the
/// determinant crossed zero in between, which the nodal σ_min can miss.
pub fn is_accelerant(h: &Accelerant, tol: f64) -> AccelerantReport {
    let g = h.grid();
    let r = h.r();
    let nsteps = g.cells();
    let c = 2 * nsteps;
    let sweep: Vec<(f64, f64, C64)> = par::map(nsteps, |k0| {
        let k = k0 + 1;
        let w: Vec<f64> = crate::fields::trapezoid(k, g.step())
            .iter()
            .map(|x| x.sqrt())
            .collect();
        let d = (k + 1) * r;
        let mut s = DMatrix::<C64>::identity(d, d);
        for a in 0..=k {
            for b in 0..=k {
                let hb = h.sample((c as isize + 2 * (a as isize - b as isize)) as usize);
                let f = w[a] * w[b];
                for p in 0..r {
                    for q in 0..r {
                        s[(a * r + p, b * r + q)] += hb[p * r + q] * f;
                    }
                }
            }
        }
        let det = s.clone().lu().determinant();
        let sv = s.singular_values();
        (sv.min(), sv.max(), det)
    });
    let mut margins = Vec::with_capacity(nsteps);
    let mut worst = (f64::INFINITY, 0.0);
    let mut rejected = false;
    let mut crossing = None;
    let mut prev_det = ONE;
    for (k0, &(smin, smax, det)) in sweep.iter().enumerate() {
        let alpha = g.x(k0 + 1);
        margins.push(AcceleratorMargin {
            alpha,
            sigma_min: smin,
            sigma_max: smax,
        });
        if smin < worst.0 {
            worst = (smin, alpha);
        }
        if !(smin > tol * smax) {
            rejected = true;
        }
        if crossing.is_none() && det.is_finite() && det != ZERO && prev_det != ZERO {
            let turn = (det / prev_det).arg();
            if turn.abs() > std::f64::consts::FRAC_PI_2 {
                let u = prev_det / prev_det.norm();
                let a = prev_det.norm();
                let b = (det * u.conj()).re;
                let t = if b < 0.0 { a / (a - b) } else { 1.0 };
                crossing = Some(g.x(k0) + t * g.step());
            }
        }
        prev_det = det;
    }
    let worst_alpha = crossing.unwrap_or(worst.1);
    AccelerantReport {
        accepted: !rejected && crossing.is_none(),
        min_singular_value: worst.0,
        worst_alpha,
        crossing_alpha: crossing,
        margins,
    }
}

/// Value of F inside the row-`i` integral at (s, j): one-sided at the ends
/// of [0, x_i], midpoint in the interior.
#[inline]
fn f_int(f: &Kernel2D, i: usize, s: usize, j: usize) -> &[C64] {
    if s != j {
        f.get(s, j)
    } else if s == 0 {
        f.side(0, 0, Side::Lower)
    } else if s == i {
        f.side(s, s, Side::Upper)
    } else {
        f.get(s, s)
    }
}

/// Free term F(x_i, x_j) of row i; at j = i this is the limit from below.
#[inline]
fn f_free(f: &Kernel2D, i: usize, j: usize) -> &[C64] {
    f.side(i, j, Side::Lower)
}

/// Block LU of the scaled row systems, shared by every row.
///
/// Row i solves y(Ω_i⁻¹ + F_i) = -f with y_s = ω_s X(x_i, x_s). Going from
/// row i to row i+1 only changes the last diagonal block (its weight drops
/// from h/2 to h and its F value from the upper side to the midpoint) and
/// adds a border. So one non-pivoted block LU serves all rows; each row
/// keeps its own last pivot.
struct BorderedLu {
    n: usize,
    /// u[k] holds U(s, k) for s < k.
    u: Vec<Vec<C64>>,
    /// l[k] holds L(k, s) for s < k.
    l: Vec<Vec<C64>>,
    /// inverse pivot used when node k is interior (k = 0: the left end)
    piv_int: Vec<Vec<C64>>,
    /// inverse pivot used when node k closes the row, or the pivot's σ_min
    /// when it is numerically singular
    piv_last: Vec<std::result::Result<Vec<C64>, f64>>,
    /// first node whose interior pivot is unusable
    breakdown: Option<usize>,
}

/// Pivots are O(1/h); anything below 1e-10/h is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

fn pivot_inverse(n: usize, p: &[C64], scale: f64) -> std::result::Result<Vec<C64>, f64> {
    let (smin, _) = block::sigma_range(n, p);
    if !(smin > PIVOT_TOL * scale) {
        return Err(smin);
    }
    block::inverse(n, p).ok_or(smin)
}

impl BorderedLu {
    fn new(f: &Kernel2D) -> Self {
        let n = f.n();
        let nn = n * n;
        let m = f.grid().nodes();
        let h = f.grid().step();
        let mut lu = BorderedLu {
            n,
            u: vec![Vec::new(); m],
            l: vec![Vec::new(); m],
            piv_int: vec![Vec::new(); m],
            piv_last: vec![Err(0.0); m],
            breakdown: None,
        };
        let diag = |c: f64, b: &[C64]| {
            let mut p = b.to_vec();
            for a in 0..n {
                p[a * n + a] += c;
            }
            p
        };
        let p0 = diag(2.0 / h, f.side(0, 0, Side::Lower));
        match pivot_inverse(n, &p0, 1.0 / h) {
            Ok(inv) => lu.piv_int[0] = inv,
            Err(_) => {
                lu.breakdown = Some(0);
                return lu;
            }
        }
        for k in 1..m {
            let mut ucol = vec![ZERO; k * nn];
            for s in 0..k {
                let mut acc = f.get(s, k).to_vec();
                for t in 0..s {
                    block::gemm_acc(
                        n,
                        &mut acc,
                        -ONE,
                        &lu.l[s][t * nn..(t + 1) * nn],
                        &ucol[t * nn..(t + 1) * nn],
                    );
                }
                ucol[s * nn..(s + 1) * nn].copy_from_slice(&acc);
            }
            let mut lrow = vec![ZERO; k * nn];
            for s in 0..k {
                let mut acc = f.get(k, s).to_vec();
                for t in 0..s {
                    block::gemm_acc(
                        n,
                        &mut acc,
                        -ONE,
                        &lrow[t * nn..(t + 1) * nn],
                        &lu.u[s][t * nn..(t + 1) * nn],
                    );
                }
                let v = block::mul(n, &acc, &lu.piv_int[s]);
                lrow[s * nn..(s + 1) * nn].copy_from_slice(&v);
            }
            let mut schur = block::zeros(n);
            for t in 0..k {
                block::gemm_acc(
                    n,
                    &mut schur,
                    ONE,
                    &lrow[t * nn..(t + 1) * nn],
                    &ucol[t * nn..(t + 1) * nn],
                );
            }
            let last = block::sub(&diag(2.0 / h, f.side(k, k, Side::Upper)), &schur);
            lu.piv_last[k] = pivot_inverse(n, &last, 1.0 / h);
            lu.u[k] = ucol;
            lu.l[k] = lrow;
            let int = block::sub(&diag(1.0 / h, f.get(k, k)), &schur);
            match pivot_inverse(n, &int, 1.0 / h) {
                Ok(inv) => lu.piv_int[k] = inv,
                Err(_) => {
                    lu.breakdown = Some(k);
                    return lu;
                }
            }
        }
        lu
    }

    /// True when the factorization covers row i.
    fn covers(&self, i: usize) -> bool {
        match self.breakdown {
            None => true,
            Some(b) => i <= b,
        }
    }

    /// Solves row i. The last pivot is the Schur complement of the row
    /// matrix, so its σ_min bounds the row matrix's σ_min from above; a
    /// singular last pivot is returned as that bound.
    fn solve_row(&self, f: &Kernel2D, i: usize) -> std::result::Result<Vec<C64>, f64> {
        let n = self.n;
        let nn = n * n;
        let last = self.piv_last[i].as_ref().map_err(|s| *s)?;
        let mut z = vec![ZERO; (i + 1) * nn];
        for j in 0..=i {
            let mut c = block::scale(f_free(f, i, j), -ONE);
            for s in 0..j {
                block::gemm_acc(
                    n,
                    &mut c,
                    -ONE,
                    &z[s * nn..(s + 1) * nn],
                    &self.u[j][s * nn..(s + 1) * nn],
                );
            }
            let piv = if j == i { last } else { &self.piv_int[j] };
            let v = block::mul(n, &c, piv);
            z[j * nn..(j + 1) * nn].copy_from_slice(&v);
        }
        let mut y = z;
        for s in (0..i).rev() {
            let mut acc = y[s * nn..(s + 1) * nn].to_vec();
            for j in s + 1..=i {
                block::gemm_acc(
                    n,
                    &mut acc,
                    -ONE,
                    &y[j * nn..(j + 1) * nn],
                    &self.l[j][s * nn..(s + 1) * nn],
                );
            }
            y[s * nn..(s + 1) * nn].copy_from_slice(&acc);
        }
        Ok(y)
    }
}

/// Dense solve of row i, used when the shared factorization broke down.
fn solve_row_dense(f: &Kernel2D, i: usize) -> std::result::Result<Vec<C64>, f64> {
    let n = f.n();
    let nn = n * n;
    let h = f.grid().step();
    let w = crate::fields::trapezoid(i, h);
    let d = (i + 1) * n;
    // Bᵀ yᵀ = -fᵀ with B = Ω⁻¹ + F_i
    let mut bt = DMatrix::<C64>::zeros(d, d);
    for s in 0..=i {
        for j in 0..=i {
            let b = f_int(f, i, s, j);
            for a in 0..n {
                for c in 0..n {
                    bt[(j * n + c, s * n + a)] = b[a * n + c];
                }
            }
        }
        for a in 0..n {
            bt[(s * n + a, s * n + a)] += 1.0 / w[s];
        }
    }
    let mut rhs = DMatrix::<C64>::zeros(d, n);
    for j in 0..=i {
        let b = f_free(f, i, j);
        for a in 0..n {
            for c in 0..n {
                rhs[(j * n + c, a)] = -b[a * n + c];
            }
        }
    }
    let smin = bt.singular_values().min();
    if !(smin > PIVOT_TOL / h) {
        return Err(smin * h);
    }
    match bt.lu().solve(&rhs).filter(|x| x.iter().all(|z| z.is_finite())) {
        Some(x) => {
            let mut y = vec![ZERO; (i + 1) * nn];
            for j in 0..=i {
                for a in 0..n {
                    for c in 0..n {
                        y[j * nn + a * n + c] = x[(j * n + c, a)];
                    }
                }
            }
            Ok(y)
        }
        None => Err(smin * h),
    }
}

/// Solves X(x,t) + F(x,t) + ∫₀ˣ X(x,s) F(s,t) ds = 0 for lower X.
///
/// Row i is the trapezoid discretization on [0, x_i]. A singular row system
/// means I + F restricted to [0, x_i] is not invertible, reported as
/// [`Error::NotAccelerant`] at α = x_i.
pub fn solve_glm(f: &Kernel2D) -> Result<Kernel2D> {
    let g = f.grid();
    let n = f.n();
    let nn = n * n;
    let h = g.step();
    let m = g.nodes();
    let lu = BorderedLu::new(f);
    let rows: Vec<std::result::Result<Vec<C64>, f64>> = par::map(m, |i| {
        if i == 0 {
            return Ok(block::scale(f_free(f, 0, 0), -ONE));
        }
        let y = if lu.covers(i) {
            lu.solve_row(f, i).map_err(|s| s * h)?
        } else {
            solve_row_dense(f, i)?
        };
        let w = crate::fields::trapezoid(i, h);
        let mut x = y;
        for j in 0..=i {
            for v in &mut x[j * nn..(j + 1) * nn] {
                *v /= w[j];
            }
        }
        Ok(x)
    });
    let mut out = Kernel2D::zeros(n, g, Support::Lower);
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Ok(x) => {
                for j in 0..=i {
                    out.get_mut(i, j).copy_from_slice(&x[j * nn..(j + 1) * nn]);
                }
            }
            Err(sigma_min) => {
                return Err(Error::NotAccelerant {
                    alpha: g.x(i),
                    sigma_min,
                })
            }
        }
    }
    Ok(out)
}

/// Largest block residual of the discrete GLM equation over all rows.
pub fn glm_residual(f: &Kernel2D, x: &Kernel2D) -> f64 {
    let g = f.grid();
    let n = f.n();
    let h = g.step();
    let per_row = par::map(g.nodes(), |i| {
        let w = crate::fields::trapezoid(i, h);
        let mut worst: f64 = 0.0;
        for j in 0..=i {
            let mut acc = x.get(i, j).to_vec();
            block::axpy(&mut acc, ONE, f_free(f, i, j));
            for s in 0..=i {
                block::gemm_acc(n, &mut acc, C64::new(w[s], 0.0), x.get(i, s), f_int(f, i, s, j));
            }
            worst = worst.max(block::max_abs(&acc));
        }
        worst
    });
    per_row.into_iter().fold(0.0, f64::max)
}

/// r_h: the solution of the Krein equation for h.
pub fn solve_krein(h: &Accelerant) -> Result<Kernel2D> {
    solve_glm(&convolution_kernel(h))
}

/// r_h on the refined grid with 2N cells (nodes include the half nodes).
pub fn solve_krein_refined(h: &Accelerant) -> Result<Kernel2D> {
    solve_glm(&convolution_kernel_on(h, 2 * h.grid().cells())?)
}

#[derive(Clone, Debug)]
pub struct Factorization {
    /// Lower factor: solve_glm(F).
    pub l_plus: Kernel2D,
    /// Upper factor with I + F = (I + L₊)⁻¹(I + L₋)⁻¹.
    pub l_minus: Kernel2D,
    /// (I + L₊)(I + F) - I, which equals (I + L₋)⁻¹ - I.
    pub upper_product: Kernel2D,
    /// gp_1 norm of the strict lower part of `upper_product` before masking.
    pub leakage: f64,
    /// max |(I+L₊)⁻¹(I+L₋)⁻¹ - (I+F)| over matrix entries.
    pub reconstruction: f64,
}

pub const LEAKAGE_TOL: f64 = 5e-8;

/// Splits I + F into triangular factors.
pub fn factorize(f: &Kernel2D) -> Result<Factorization> {
    let l_plus = solve_glm(f)?;
    let mf = quadops::op_from_kernel(f);
    let ml = quadops::op_from_kernel(&l_plus);
    let mu = DiscOp {
        n: f.n(),
        grid: f.grid(),
        m: &ml.m + &mf.m + &ml.m * &mf.m,
    };
    let full = quadops::kernel_from_op(&mu, Support::Full);
    let strict_lower = Kernel2D::from_fn(f.n(), f.grid(), Support::Lower, |i, j, b| {
        if j < i {
            b.copy_from_slice(full.get(i, j))
        }
    });
    let leakage = quadops::gp_norm(&strict_lower, 1.0);
    if !(leakage <= LEAKAGE_TOL) {
        return Err(Error::SupportLeak { norm: leakage });
    }
    let upper_product = quadops::kernel_from_op(&mu, Support::Upper);
    let l_minus_op = quadops::invert_identity_plus(&quadops::op_from_kernel(&upper_product))?;
    let l_minus = quadops::kernel_from_op(&l_minus_op, Support::Upper);

    let d = mf.dim();
    let id = DMatrix::<C64>::identity(d, d);
    let lo_inv = quadops::block_triangular_inverse(&(&id + &ml.m), f.n(), true)
        .ok_or(Error::Singular { sigma_min: 0.0 })?;
    let up_inv = &id + &quadops::op_from_kernel(&upper_product).m;
    let reconstruction = (lo_inv * up_inv - (&id + &mf.m)).camax();
    Ok(Factorization {
        l_plus,
        l_minus,
        upper_product,
        leakage,
        reconstruction,
    })
}
