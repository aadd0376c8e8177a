//! Discretized integral operators: Nyström matrices, composition, adjoint,
//! inversion of I + K, triangular truncation and the G_{p,n} norm.

use nalgebra::DMatrix;

use crate::block::{self, ZERO};
use crate::error::{Error, Result};
use crate::fields::{Accelerant, GridSpec, Kernel2D, Potential, Support, C64};
use crate::par;

/// Nyström matrix of an integral operator, identity not included.
///
/// Block (i, j) is `weight(i, j) · K(x_i, x_j)`. For full kernels the weight
/// is the trapezoid weight w_j. Triangular kernels use w_j off the diagonal
/// and h/2 on it, which is the trapezoid rule on [0, x_i] (lower) or
/// [x_i, 1] (upper).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscOp {
    pub n: usize,
    pub grid: GridSpec,
    pub m: DMatrix<C64>,
}

impl DiscOp {
    pub fn zeros(n: usize, grid: GridSpec) -> Self {
        let d = grid.nodes() * n;
        DiscOp {
            n,
            grid,
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn block(&self, i: usize, j: usize) -> Vec<C64> {
        let n = self.n;
        let mut b = block::zeros(n);
        for a in 0..n {
            for c in 0..n {
                b[a * n + c] = self.m[(i * n + a, j * n + c)];
            }
        }
        b
    }

    fn is_block_lower(&self) -> bool {
        let n = self.n;
        let d = self.dim();
        (0..d).all(|r| ((r / n + 1) * n..d).all(|c| self.m[(r, c)] == ZERO))
    }

    fn is_block_upper(&self) -> bool {
        let n = self.n;
        (0..self.dim()).all(|r| (0..(r / n) * n).all(|c| self.m[(r, c)] == ZERO))
    }
}

/// Quadrature weight attached to node (i, j) of a kernel with this support.
pub fn node_weight(grid: GridSpec, support: Support, i: usize, j: usize) -> f64 {
    match support {
        Support::Full => grid.weight(j),
        _ if i == j => 0.5 * grid.step(),
        _ => grid.weight(j),
    }
}

pub fn op_from_kernel(k: &Kernel2D) -> DiscOp {
    let n = k.n();
    let g = k.grid();
    let mut op = DiscOp::zeros(n, g);
    for i in 0..g.nodes() {
        for j in 0..g.nodes() {
            let w = node_weight(g, k.support(), i, j);
            let b = k.get(i, j);
            for a in 0..n {
                for c in 0..n {
                    op.m[(i * n + a, j * n + c)] = b[a * n + c] * w;
                }
            }
        }
    }
    op
}

pub fn kernel_from_op(a: &DiscOp, support: Support) -> Kernel2D {
    let g = a.grid;
    let n = a.n;
    Kernel2D::from_fn(n, g, support, |i, j, out| {
        let w = node_weight(g, support, i, j);
        for p in 0..n {
            for c in 0..n {
                out[p * n + c] = a.m[(i * n + p, j * n + c)] / w;
            }
        }
    })
}

pub fn compose(a: &DiscOp, b: &DiscOp) -> Result<DiscOp> {
    if a.n != b.n || a.grid != b.grid {
        return Err(Error::Shape("composing operators on different grids".into()));
    }
    Ok(DiscOp {
        n: a.n,
        grid: a.grid,
        m: &a.m * &b.m,
    })
}

/// Inverse of a block-triangular matrix by block substitution.
/// `lower` selects which triangle is occupied; the other is ignored.
pub fn block_triangular_inverse(m: &DMatrix<C64>, n: usize, lower: bool) -> Option<DMatrix<C64>> {
    let nb = m.nrows() / n;
    let nn = n * n;
    let blk = |i: usize, j: usize| {
        let mut b = block::zeros(n);
        for a in 0..n {
            for c in 0..n {
                b[a * n + c] = m[(i * n + a, j * n + c)];
            }
        }
        b
    };
    let diag_inv: Vec<Vec<C64>> = (0..nb)
        .map(|i| block::inverse(n, &blk(i, i)))
        .collect::<Option<_>>()?;
    // x[i][j] for the occupied triangle, row-major over blocks
    let mut x = vec![ZERO; nb * nb * nn];
    let order: Vec<usize> = if lower {
        (0..nb).collect()
    } else {
        (0..nb).rev().collect()
    };
    for &i in &order {
        let tik: Vec<(usize, Vec<C64>)> = (0..nb)
            .filter(|&k| if lower { k < i } else { k > i })
            .map(|k| (k, blk(i, k)))
            .collect();
        for j in 0..nb {
            if (lower && j > i) || (!lower && j < i) {
                continue;
            }
            let mut acc = if i == j { block::identity(n) } else { block::zeros(n) };
            for (k, t) in &tik {
                if (lower && *k >= j) || (!lower && *k <= j) {
                    let xk = &x[(k * nb + j) * nn..(k * nb + j + 1) * nn];
                    block::gemm_acc(n, &mut acc, -block::ONE, t, xk);
                }
            }
            let v = block::mul(n, &diag_inv[i], &acc);
            x[(i * nb + j) * nn..(i * nb + j + 1) * nn].copy_from_slice(&v);
        }
    }
    let mut out = DMatrix::<C64>::zeros(m.nrows(), m.ncols());
    for i in 0..nb {
        for j in 0..nb {
            let b = &x[(i * nb + j) * nn..(i * nb + j + 1) * nn];
            for a in 0..n {
                for c in 0..n {
                    out[(i * n + a, j * n + c)] = b[a * n + c];
                }
            }
        }
    }
    Some(out)
}

/// γ(A) = (I + A)⁻¹ - I. Block-triangular inputs use substitution, so γ
/// keeps their support.
pub fn invert_identity_plus(a: &DiscOp) -> Result<DiscOp> {
    let d = a.dim();
    let id = DMatrix::<C64>::identity(d, d);
    let ipa = &id + &a.m;
    let inv = if a.is_block_lower() {
        block_triangular_inverse(&ipa, a.n, true)
    } else if a.is_block_upper() {
        block_triangular_inverse(&ipa, a.n, false)
    } else {
        ipa.clone().lu().try_inverse()
    };
    let inv = inv.filter(|m| m.iter().all(|z| z.is_finite()));
    match inv {
        Some(m) => Ok(DiscOp {
            n: a.n,
            grid: a.grid,
            m: m - id,
        }),
        None => Err(Error::Singular {
            sigma_min: ipa.singular_values().min(),
        }),
    }
}

/// Kernel-level adjoint K*(x,t) = K(t,x)ᴴ, realized as W⁻¹·Mᴴ·W.
pub fn adjoint_op(a: &DiscOp) -> DiscOp {
    let n = a.n;
    let w = a.grid.weights();
    let mut m = a.m.adjoint();
    let d = a.dim();
    for r in 0..d {
        for c in 0..d {
            m[(r, c)] *= w[c / n] / w[r / n];
        }
    }
    DiscOp {
        n,
        grid: a.grid,
        m,
    }
}

/// Zeroes the strict triangle opposite to `part`; the diagonal goes to `part`
/// (its one-sided value when the kernel carries one).
pub fn triangular_truncate(k: &Kernel2D, part: Support) -> Kernel2D {
    use crate::fields::Side;
    let side = match part {
        Support::Lower => Side::Lower,
        Support::Upper => Side::Upper,
        Support::Full => return k.clone(),
    };
    Kernel2D::from_fn(k.n(), k.grid(), part, |i, j, out| {
        out.copy_from_slice(k.side(i, j, side))
    })
}

/// max over rows and columns of the discrete L_p norm of the block spectral
/// norms, i.e. the G_{p,n} norm.
pub fn gp_norm(k: &Kernel2D, p: f64) -> f64 {
    let g = k.grid();
    let m = g.nodes();
    let n = k.n();
    let w = g.weights();
    let norms: Vec<Vec<f64>> = par::map(m, |i| {
        (0..m).map(|j| block::norm2(n, k.get(i, j)).powf(p)).collect()
    });
    let mut best: f64 = 0.0;
    for i in 0..m {
        let s: f64 = (0..m).map(|j| w[j] * norms[i][j]).sum();
        best = best.max(s);
    }
    for j in 0..m {
        let s: f64 = (0..m).map(|i| w[i] * norms[i][j]).sum();
        best = best.max(s);
    }
    best.powf(1.0 / p)
}

pub enum FieldRef<'a> {
    Accelerant(&'a Accelerant),
    Potential(&'a Potential),
}

impl<'a> From<&'a Accelerant> for FieldRef<'a> {
    fn from(h: &'a Accelerant) -> Self {
        FieldRef::Accelerant(h)
    }
}

impl<'a> From<&'a Potential> for FieldRef<'a> {
    fn from(q: &'a Potential) -> Self {
        FieldRef::Potential(q)
    }
}

/// Trapezoid L_p norm of a sampled field, blocks measured in spectral norm.
/// Potentials use ‖Q(x)‖ = max(‖q+(x)‖, ‖q-(x)‖).
pub fn lp_field_norm<'a>(f: impl Into<FieldRef<'a>>, p: f64) -> f64 {
    match f.into() {
        FieldRef::Accelerant(h) => {
            let m = h.len() - 1;
            let w = crate::fields::trapezoid(m, 1.0 / (2.0 * h.grid().cells() as f64));
            let s: f64 = (0..=m)
                .map(|k| w[k] * block::norm2(h.r(), h.sample(k)).powf(p))
                .sum();
            s.powf(1.0 / p)
        }
        FieldRef::Potential(q) => {
            let g = q.grid();
            let s: f64 = (0..g.nodes())
                .map(|i| {
                    let a = block::norm2(q.r(), q.q_plus(i));
                    let b = block::norm2(q.r(), q.q_minus(i));
                    g.weight(i) * a.max(b).powf(p)
                })
                .sum();
            s.powf(1.0 / p)
        }
    }
}

/// Matrix of a lower Volterra kernel in the trapezoid algebra.
///
/// Off-diagonal blocks are h·K(x_i, x_j). The diagonal is
/// φ(K) = (h/2)K(I - (h/4)K)⁻¹. Since φ(-K) = -φ(K)(I + φ(K))⁻¹, the
/// resolvent of this matrix reads back with diagonal exactly -K(x,x), and
/// products of such matrices are the trapezoid rule on [x_j, x_i] up to
/// O(h²) at the endpoints.
pub fn volterra_op(k: &Kernel2D) -> Result<DiscOp> {
    if k.support() != Support::Lower {
        return Err(Error::Invalid("Volterra operator needs a lower kernel".into()));
    }
    let n = k.n();
    let g = k.grid();
    let h = g.step();
    let mut op = DiscOp::zeros(n, g);
    for i in 0..g.nodes() {
        for j in 0..=i {
            let b = if i == j {
                let mut t = block::identity(n);
                block::axpy(&mut t, C64::new(-0.25 * h, 0.0), k.get(i, i));
                let inv = block::inverse(n, &t).ok_or(Error::Singular { sigma_min: 0.0 })?;
                block::scale(&block::mul(n, k.get(i, i), &inv), C64::new(0.5 * h, 0.0))
            } else {
                block::scale(k.get(i, j), C64::new(h, 0.0))
            };
            for a in 0..n {
                for c in 0..n {
                    op.m[(i * n + a, j * n + c)] = b[a * n + c];
                }
            }
        }
    }
    Ok(op)
}

/// Inverse of [`volterra_op`].
pub fn kernel_from_volterra_op(a: &DiscOp) -> Result<Kernel2D> {
    let n = a.n;
    let g = a.grid;
    let h = g.step();
    let mut out = Kernel2D::zeros(n, g, Support::Lower);
    for i in 0..g.nodes() {
        for j in 0..=i {
            let b = a.block(i, j);
            let v = if i == j {
                let mut t = block::scale(&block::identity(n), C64::new(0.5 * h, 0.0));
                block::axpy(&mut t, C64::new(0.25 * h, 0.0), &b);
                let inv = block::inverse(n, &t).ok_or(Error::Singular { sigma_min: 0.0 })?;
                block::mul(n, &inv, &b)
            } else {
                block::scale(&b, C64::new(1.0 / h, 0.0))
            };
            out.get_mut(i, j).copy_from_slice(&v);
        }
    }
    Ok(out)
}

/// Kernel of A∘B for two lower kernels, composed in the Volterra algebra.
pub fn volterra_compose(a: &Kernel2D, b: &Kernel2D) -> Result<Kernel2D> {
    let p = compose(&volterra_op(a)?, &volterra_op(b)?)?;
    kernel_from_volterra_product(&p)
}

/// Reads a kernel from a product of Volterra matrices: h scaling off the
/// diagonal, h/2 on it (the leading term of φ).
fn kernel_from_volterra_product(a: &DiscOp) -> Result<Kernel2D> {
    let n = a.n;
    let g = a.grid;
    let h = g.step();
    let mut out = Kernel2D::zeros(n, g, Support::Lower);
    for i in 0..g.nodes() {
        for j in 0..=i {
            let s = if i == j { 2.0 / h } else { 1.0 / h };
            let b = block::scale(&a.block(i, j), C64::new(s, 0.0));
            out.get_mut(i, j).copy_from_slice(&b);
        }
    }
    Ok(out)
}

/// Both reciprocity residuals max|K + L + K∘L| and max|K + L + L∘K| in the
/// Volterra algebra, measured in kernel units.
pub fn reciprocity_residuals(k: &Kernel2D, l: &Kernel2D) -> Result<(f64, f64)> {
    let mk = volterra_op(k)?;
    let ml = volterra_op(l)?;
    let sum = &mk.m + &ml.m;
    let kl = DiscOp {
        n: mk.n,
        grid: mk.grid,
        m: &sum + &mk.m * &ml.m,
    };
    let lk = DiscOp {
        n: mk.n,
        grid: mk.grid,
        m: &sum + &ml.m * &mk.m,
    };
    Ok((
        kernel_from_volterra_product(&kl)?.max_abs(),
        kernel_from_volterra_product(&lk)?.max_abs(),
    ))
}

/// Applies the operator to sampled vector-valued data f (block column n×1 per node).
pub fn apply(a: &DiscOp, f: &[C64]) -> Vec<C64> {
    let v = nalgebra::DVector::from_column_slice(f);
    (&a.m * v).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn scalar_kernel(g: GridSpec, s: Support, f: impl Fn(f64, f64) -> C64) -> Kernel2D {
        Kernel2D::from_fn(1, g, s, |i, j, b| b[0] = f(g.x(i), g.x(j)))
    }

    #[test]
    fn constant_kernel_rows_sum_to_one() {
        let g = grid(8);
        let op = op_from_kernel(&scalar_kernel(g, Support::Full, |_, _| c(1.0)));
        for i in 0..9 {
            let s: C64 = (0..9).map(|j| op.m[(i, j)]).sum();
            assert!((s - c(1.0)).norm() < 1e-15);
            assert_eq!(op.m[(i, 3)], c(g.weight(3)));
        }
        assert_eq!(op_from_kernel(&Kernel2D::zeros(1, g, Support::Full)).m.camax(), 0.0);
    }

    #[test]
    fn product_kernel_integrates_linear_function_exactly() {
        let g = grid(8);
        let op = op_from_kernel(&scalar_kernel(g, Support::Full, |x, t| c(x * t)));
        let y = apply(&op, &[c(1.0); 9]);
        for i in 0..9 {
            assert!((y[i] - c(g.x(i) / 2.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_op_round_trip_and_mask() {
        let g = grid(8);
        let k = scalar_kernel(g, Support::Full, |x, t| C64::new(x - 2.0 * t, x * t));
        let back = kernel_from_op(&op_from_kernel(&k), Support::Full);
        assert!(back.sub(&k).unwrap().max_abs() < 1e-15);
        let ones = scalar_kernel(g, Support::Lower, |_, _| c(1.0));
        let lower = kernel_from_op(&op_from_kernel(&ones), Support::Lower);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(lower.get(i, j)[0], c(if j <= i { 1.0 } else { 0.0 }));
            }
        }
    }

    #[test]
    fn constant_kernels_compose_to_one() {
        let g = grid(8);
        let a = op_from_kernel(&scalar_kernel(g, Support::Full, |_, _| c(1.0)));
        let k = kernel_from_op(&compose(&a, &a).unwrap(), Support::Full);
        assert!(k.max_abs() > 0.0);
        for v in k.values() {
            assert!((v - c(1.0)).norm() < 1e-12);
        }
        let z = compose(&a, &DiscOp::zeros(1, g)).unwrap();
        assert_eq!(z.m.camax(), 0.0);
    }

    #[test]
    fn rank_one_full_resolvent() {
        let g = grid(8);
        let a = op_from_kernel(&scalar_kernel(g, Support::Full, |_, _| c(0.5)));
        let gam = kernel_from_op(&invert_identity_plus(&a).unwrap(), Support::Full);
        for v in gam.values() {
            assert!((v - c(-1.0 / 3.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn lower_constant_resolvent_is_lower_and_close_to_exponential() {
        let kappa = 0.5;
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let g = grid(n);
            let a = op_from_kernel(&scalar_kernel(g, Support::Lower, |_, _| c(kappa)));
            let gam = invert_identity_plus(&a).unwrap();
            assert!(gam.is_block_lower());
            let k = kernel_from_op(&gam, Support::Lower);
            let mut e: f64 = 0.0;
            for i in 1..=n {
                for j in 1..i {
                    let want = -kappa * (-kappa * (g.x(i) - g.x(j))).exp();
                    e = e.max((k.get(i, j)[0] - c(want)).norm());
                }
            }
            errs.push(e);
        }
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn adjoint_is_involution_and_fixes_symmetric_kernels() {
        let g = grid(8);
        let k = scalar_kernel(g, Support::Full, |x, t| C64::new(x + t, x * x - t));
        let op = op_from_kernel(&k);
        let back = adjoint_op(&adjoint_op(&op));
        assert!((&back.m - &op.m).camax() < 1e-14);
        let sym = op_from_kernel(&scalar_kernel(g, Support::Full, |x, t| c(x + t)));
        assert!((&adjoint_op(&sym).m - &sym.m).camax() < 1e-15);
        let adj = kernel_from_op(&adjoint_op(&op), Support::Full);
        for i in 0..9 {
            for j in 0..9 {
                assert!((adj.get(i, j)[0] - k.get(j, i)[0].conj()).norm() < 1e-14);
            }
        }
        assert_eq!(adjoint_op(&DiscOp::zeros(1, g)).m.camax(), 0.0);
    }

    #[test]
    fn adjoint_maps_lower_to_upper() {
        let g = grid(8);
        let k = scalar_kernel(g, Support::Lower, |x, t| C64::new(1.0 + x, t));
        let up = kernel_from_op(&adjoint_op(&op_from_kernel(&k)), Support::Upper);
        let direct = Kernel2D::from_fn(1, g, Support::Upper, |i, j, b| b[0] = k.get(j, i)[0].conj());
        assert!(up.sub(&direct).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn truncation_partitions_a_full_kernel() {
        let g = grid(8);
        let k = scalar_kernel(g, Support::Full, |x, t| C64::new(x - t, 1.0 + x * t));
        let lo = triangular_truncate(&k, Support::Lower);
        let up = triangular_truncate(&k, Support::Upper);
        let diag = Kernel2D::from_fn(1, g, Support::Full, |i, j, b| {
            if i == j {
                b[0] = k.get(i, i)[0]
            }
        });
        let sum = lo.axpy(c(1.0), &up).unwrap().sub(&diag).unwrap();
        assert!(sum.sub(&k).unwrap().max_abs() < 1e-15);
        assert_eq!(triangular_truncate(&lo, Support::Lower), lo);
        let ones = triangular_truncate(&scalar_kernel(g, Support::Full, |_, _| c(1.0)), Support::Upper);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(ones.get(i, j)[0].re, if j >= i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gp_norm_examples() {
        let g = grid(8);
        assert_eq!(gp_norm(&Kernel2D::zeros(2, g, Support::Full), 1.0), 0.0);
        let ones = scalar_kernel(g, Support::Full, |_, _| c(1.0));
        for p in [1.0, 2.0, 3.5] {
            assert!((gp_norm(&ones, p) - 1.0).abs() < 1e-12);
        }
        let k = scalar_kernel(g, Support::Full, C64::new);
        let z = C64::new(-0.3, 2.0);
        let scaled = k.map_blocks(|b| vec![b[0] * z]);
        assert!((gp_norm(&scaled, 2.0) - z.norm() * gp_norm(&k, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn lp_field_norm_examples() {
        let g = grid(8);
        assert_eq!(lp_field_norm(&Accelerant::zero(1, g), 1.0), 0.0);
        let h = Accelerant::constant(g, C64::new(0.0, -0.75)).unwrap();
        assert!((lp_field_norm(&h, 1.0) - 1.5).abs() < 1e-12);
        let q = Potential::scalar(g, |_| c(2.0), |_| c(-1.0)).unwrap();
        assert!((lp_field_norm(&q, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn volterra_op_round_trip() {
        let g = grid(8);
        let k = scalar_kernel(g, Support::Lower, |x, t| C64::new(1.0 + x, t - 0.5));
        let back = kernel_from_volterra_op(&volterra_op(&k).unwrap()).unwrap();
        assert!(back.sub(&k).unwrap().max_abs() < 1e-13);
    }
}
