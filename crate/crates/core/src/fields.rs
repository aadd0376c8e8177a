//! Sampled accelerants, potentials and kernels, the constant matrices J, B,
//! a, and the elementary transforms between fields.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::block;
use crate::error::{Error, Result};

pub use num_complex::Complex64 as C64;

const I: C64 = C64::new(0.0, 1.0);

/// Uniform grid with N cells on [0,1] and trapezoid weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(n));
        }
        Ok(GridSpec { n })
    }

    /// Cell count N.
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Node count N+1.
    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n {
            0.5 / self.n as f64
        } else {
            1.0 / self.n as f64
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.weight(i)).collect()
    }

    /// The grid with 2N cells; its nodes are the nodes and midpoints of this one.
    pub fn refined(&self) -> GridSpec {
        GridSpec { n: 2 * self.n }
    }
}

/// Trapezoid weights on the nodes 0..=m of spacing `h` (all zero when m = 0).
pub fn trapezoid(m: usize, h: f64) -> Vec<f64> {
    if m == 0 {
        return vec![0.0];
    }
    let mut w = vec![h; m + 1];
    w[0] = 0.5 * h;
    w[m] = 0.5 * h;
    w
}

/// One-sided limits h(0+) and h(0-) of an accelerant with a jump at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroLimits {
    pub plus: Vec<C64>,
    pub minus: Vec<C64>,
}

/// r×r matrix function on [-1,1] sampled at ξ_k = -1 + k/(2N), k = 0..=4N.
///
/// If h jumps at 0, `values[2N]` is the midpoint and the one-sided limits
/// live in `zero_limits`. The Krein equation needs both sides: its free
/// term at t = x sees h(0+), the kernel at s = t = x sees h(0-).
#[derive(Clone, Debug, PartialEq)]
pub struct Accelerant {
    r: usize,
    grid: GridSpec,
    values: Vec<C64>,
    zero_limits: Option<ZeroLimits>,
}

impl Accelerant {
    pub fn new(r: usize, grid: GridSpec, values: Vec<C64>) -> Result<Self> {
        let want = (4 * grid.cells() + 1) * r * r;
        if r == 0 || values.len() != want {
            return Err(Error::Shape(format!(
                "accelerant with r={r}, N={} needs {want} entries, got {}",
                grid.cells(),
                values.len()
            )));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("accelerant samples".into()));
        }
        Ok(Accelerant {
            r,
            grid,
            values,
            zero_limits: None,
        })
    }

    /// Samples `f(ξ)`, which returns an r×r row-major block.
    pub fn from_fn(r: usize, grid: GridSpec, f: impl Fn(f64) -> Vec<C64>) -> Result<Self> {
        let mut values = Vec::with_capacity((4 * grid.cells() + 1) * r * r);
        for k in 0..=4 * grid.cells() {
            let b = f(xi(grid, k));
            if b.len() != r * r {
                return Err(Error::Shape("sample block has wrong size".into()));
            }
            values.extend(b);
        }
        Accelerant::new(r, grid, values)
    }

    pub fn scalar(grid: GridSpec, f: impl Fn(f64) -> C64) -> Result<Self> {
        Accelerant::from_fn(1, grid, |x| vec![f(x)])
    }

    pub fn constant(grid: GridSpec, c: C64) -> Result<Self> {
        Accelerant::scalar(grid, |_| c)
    }

    pub fn zero(r: usize, grid: GridSpec) -> Self {
        Accelerant::new(r, grid, vec![block::ZERO; (4 * grid.cells() + 1) * r * r]).unwrap()
    }

    /// Attaches one-sided limits at 0 and sets the midpoint sample to their mean.
    pub fn with_zero_limits(mut self, plus: Vec<C64>, minus: Vec<C64>) -> Result<Self> {
        let rr = self.r * self.r;
        if plus.len() != rr || minus.len() != rr {
            return Err(Error::Shape("zero limits must be r×r".into()));
        }
        if plus.iter().chain(&minus).any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("accelerant zero limits".into()));
        }
        let c = 2 * self.grid.cells() * rr;
        for a in 0..rr {
            self.values[c + a] = 0.5 * (plus[a] + minus[a]);
        }
        self.zero_limits = Some(ZeroLimits { plus, minus });
        Ok(self)
    }

    pub fn without_zero_limits(mut self) -> Self {
        self.zero_limits = None;
        self
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        4 * self.grid.cells() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn zero_limits(&self) -> Option<&ZeroLimits> {
        self.zero_limits.as_ref()
    }

    /// ξ_k = -1 + k/(2N).
    pub fn xi(&self, k: usize) -> f64 {
        xi(self.grid, k)
    }

    pub fn sample(&self, k: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.values[k * rr..(k + 1) * rr]
    }

    /// h(0+): the stored limit, or the sample at 0 if h is continuous there.
    pub fn plus_limit(&self) -> &[C64] {
        match &self.zero_limits {
            Some(z) => &z.plus,
            None => self.sample(2 * self.grid.cells()),
        }
    }

    /// h(0-).
    pub fn minus_limit(&self) -> &[C64] {
        match &self.zero_limits {
            Some(z) => &z.minus,
            None => self.sample(2 * self.grid.cells()),
        }
    }

    /// Keeps every `factor`-th sample, giving the accelerant on N/factor cells.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        let n = self.grid.cells();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::Invalid(format!(
                "cannot decimate N={n} by {factor}: grids are not nested"
            )));
        }
        let grid = GridSpec::new(n / factor)?;
        let rr = self.r * self.r;
        let mut values = Vec::with_capacity((4 * grid.cells() + 1) * rr);
        for k in 0..=4 * grid.cells() {
            values.extend_from_slice(self.sample(k * factor));
        }
        let mut out = Accelerant::new(self.r, grid, values)?;
        out.zero_limits = self.zero_limits.clone();
        Ok(out)
    }

    pub fn map_values(&self, f: impl Fn(C64) -> C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z = f(*z));
        if let Some(z) = out.zero_limits.as_mut() {
            z.plus.iter_mut().for_each(|v| *v = f(*v));
            z.minus.iter_mut().for_each(|v| *v = f(*v));
        }
        out
    }

    /// Entrywise `self + s·other` on the same grid, limits included.
    pub fn axpy(&self, s: C64, other: &Accelerant) -> Result<Self> {
        if self.r != other.r || self.grid != other.grid {
            return Err(Error::Shape("accelerants live on different grids".into()));
        }
        let mut out = self.clone();
        block::axpy(&mut out.values, s, &other.values);
        if self.zero_limits.is_some() || other.zero_limits.is_some() {
            let mut plus = self.plus_limit().to_vec();
            let mut minus = self.minus_limit().to_vec();
            block::axpy(&mut plus, s, other.plus_limit());
            block::axpy(&mut minus, s, other.minus_limit());
            out.zero_limits = Some(ZeroLimits { plus, minus });
        }
        Ok(out)
    }
}

fn xi(grid: GridSpec, k: usize) -> f64 {
    -1.0 + k as f64 / (2.0 * grid.cells() as f64)
}

/// h♯(x) = h(-x).
pub fn sharp(h: &Accelerant) -> Accelerant {
    let m = h.len();
    let mut values = Vec::with_capacity(h.values.len());
    for k in 0..m {
        values.extend_from_slice(h.sample(m - 1 - k));
    }
    Accelerant {
        r: h.r,
        grid: h.grid,
        values,
        zero_limits: h.zero_limits.as_ref().map(|z| ZeroLimits {
            plus: z.minus.clone(),
            minus: z.plus.clone(),
        }),
    }
}

/// H(x) = diag(h(x), h♯(x)), a 2r×2r accelerant.
#[allow(non_snake_case)]
pub fn block_embed_H(h: &Accelerant) -> Accelerant {
    let r = h.r;
    let hs = sharp(h);
    let diag = |a: &[C64], b: &[C64]| {
        let n = 2 * r;
        let mut out = block::zeros(n);
        for i in 0..r {
            for j in 0..r {
                out[i * n + j] = a[i * r + j];
                out[(r + i) * n + r + j] = b[i * r + j];
            }
        }
        out
    };
    let mut values = Vec::with_capacity(h.values.len() * 4);
    for k in 0..h.len() {
        values.extend(diag(h.sample(k), hs.sample(k)));
    }
    Accelerant {
        r: 2 * r,
        grid: h.grid,
        values,
        zero_limits: h.zero_limits.as_ref().map(|_| ZeroLimits {
            plus: diag(h.plus_limit(), hs.plus_limit()),
            minus: diag(h.minus_limit(), hs.minus_limit()),
        }),
    }
}

/// Off-diagonal potential Q = [[0, q+],[q-, 0]] sampled at the N+1 nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    r: usize,
    grid: GridSpec,
    q_plus: Vec<C64>,
    q_minus: Vec<C64>,
}

/// Builds a potential from its top-right and bottom-left node sequences.
pub fn assemble_potential(
    r: usize,
    grid: GridSpec,
    top_right: Vec<C64>,
    bottom_left: Vec<C64>,
) -> Result<Potential> {
    let want = grid.nodes() * r * r;
    if r == 0 || top_right.len() != want || bottom_left.len() != want {
        return Err(Error::Shape(format!(
            "potential blocks need {want} entries each, got {} and {}",
            top_right.len(),
            bottom_left.len()
        )));
    }
    if top_right.iter().chain(&bottom_left).any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("potential samples".into()));
    }
    Ok(Potential {
        r,
        grid,
        q_plus: top_right,
        q_minus: bottom_left,
    })
}

impl Potential {
    pub fn zero(r: usize, grid: GridSpec) -> Self {
        let z = vec![block::ZERO; grid.nodes() * r * r];
        Potential {
            r,
            grid,
            q_plus: z.clone(),
            q_minus: z,
        }
    }

    pub fn from_fns(
        r: usize,
        grid: GridSpec,
        plus: impl Fn(f64) -> Vec<C64>,
        minus: impl Fn(f64) -> Vec<C64>,
    ) -> Result<Self> {
        let mut p = Vec::new();
        let mut m = Vec::new();
        for i in 0..grid.nodes() {
            p.extend(plus(grid.x(i)));
            m.extend(minus(grid.x(i)));
        }
        assemble_potential(r, grid, p, m)
    }

    pub fn scalar(
        grid: GridSpec,
        plus: impl Fn(f64) -> C64,
        minus: impl Fn(f64) -> C64,
    ) -> Result<Self> {
        Potential::from_fns(1, grid, |x| vec![plus(x)], |x| vec![minus(x)])
    }

    /// Reads full 2r×2r node matrices, rejecting nonzero diagonal blocks.
    pub fn from_full(r: usize, grid: GridSpec, mats: &[Vec<C64>]) -> Result<Self> {
        let n = 2 * r;
        if mats.len() != grid.nodes() || mats.iter().any(|m| m.len() != n * n) {
            return Err(Error::Shape("full potential needs N+1 blocks of 2r×2r".into()));
        }
        let mut p = Vec::with_capacity(grid.nodes() * r * r);
        let mut m = Vec::with_capacity(grid.nodes() * r * r);
        for (k, q) in mats.iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    if (a < r) == (b < r) && q[a * n + b] != block::ZERO {
                        return Err(Error::NotOffDiagonal(format!(
                            "diagonal block entry ({a},{b}) is nonzero at node {k}"
                        )));
                    }
                }
            }
            for a in 0..r {
                for b in 0..r {
                    p.push(q[a * n + r + b]);
                }
            }
            for a in 0..r {
                for b in 0..r {
                    m.push(q[(r + a) * n + b]);
                }
            }
        }
        assemble_potential(r, grid, p, m)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn q_plus(&self, i: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.q_plus[i * rr..(i + 1) * rr]
    }

    pub fn q_minus(&self, i: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.q_minus[i * rr..(i + 1) * rr]
    }

    pub fn q_plus_all(&self) -> &[C64] {
        &self.q_plus
    }

    pub fn q_minus_all(&self) -> &[C64] {
        &self.q_minus
    }

    /// Q(x_i) as a 2r×2r row-major block.
    pub fn full(&self, i: usize) -> Vec<C64> {
        off_diagonal(self.r, self.q_plus(i), self.q_minus(i))
    }

    /// JQ(x_i) = [[0, -i q+],[i q-, 0]].
    pub fn jq(&self, i: usize) -> Vec<C64> {
        let p: Vec<C64> = self.q_plus(i).iter().map(|z| -I * z).collect();
        let m: Vec<C64> = self.q_minus(i).iter().map(|z| I * z).collect();
        off_diagonal(self.r, &p, &m)
    }

    /// Q on the refined 2N grid, linear between nodes.
    pub fn refined(&self) -> Potential {
        let rr = self.r * self.r;
        let interp = |v: &[C64]| {
            let mut out = Vec::with_capacity((2 * self.grid.cells() + 1) * rr);
            for i in 0..self.grid.nodes() {
                out.extend_from_slice(&v[i * rr..(i + 1) * rr]);
                if i < self.grid.cells() {
                    for a in 0..rr {
                        out.push(0.5 * (v[i * rr + a] + v[(i + 1) * rr + a]));
                    }
                }
            }
            out
        };
        Potential {
            r: self.r,
            grid: self.grid.refined(),
            q_plus: interp(&self.q_plus),
            q_minus: interp(&self.q_minus),
        }
    }

    pub fn decimate(&self, factor: usize) -> Result<Self> {
        let n = self.grid.cells();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::Invalid(format!(
                "cannot decimate N={n} by {factor}: grids are not nested"
            )));
        }
        let grid = GridSpec::new(n / factor)?;
        let mut p = Vec::new();
        let mut m = Vec::new();
        for i in 0..grid.nodes() {
            p.extend_from_slice(self.q_plus(i * factor));
            m.extend_from_slice(self.q_minus(i * factor));
        }
        assemble_potential(self.r, grid, p, m)
    }

    /// Entrywise `self + s·other`.
    pub fn axpy(&self, s: C64, other: &Potential) -> Result<Self> {
        if self.r != other.r || self.grid != other.grid {
            return Err(Error::Shape("potentials live on different grids".into()));
        }
        let mut out = self.clone();
        block::axpy(&mut out.q_plus, s, &other.q_plus);
        block::axpy(&mut out.q_minus, s, &other.q_minus);
        Ok(out)
    }
}

fn off_diagonal(r: usize, p: &[C64], m: &[C64]) -> Vec<C64> {
    let n = 2 * r;
    let mut out = block::zeros(n);
    for a in 0..r {
        for b in 0..r {
            out[a * n + r + b] = p[a * r + b];
            out[(r + a) * n + b] = m[a * r + b];
        }
    }
    out
}

/// Q*(x) = Q(x)ᴴ: swaps the blocks and conjugate-transposes each.
pub fn potential_adjoint(q: &Potential) -> Potential {
    let r = q.r;
    let mut p = Vec::with_capacity(q.q_plus.len());
    let mut m = Vec::with_capacity(q.q_minus.len());
    for i in 0..q.grid.nodes() {
        p.extend(block::adjoint(r, q.q_minus(i)));
        m.extend(block::adjoint(r, q.q_plus(i)));
    }
    Potential {
        r,
        grid: q.grid,
        q_plus: p,
        q_minus: m,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Lower,
    Upper,
    Full,
}

/// Which side of the diagonal x = t a one-sided value is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// t < x
    Lower,
    /// t > x
    Upper,
}

/// One-sided diagonal values of a kernel that jumps across x = t.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSides {
    pub lower: Vec<C64>,
    pub upper: Vec<C64>,
}

/// n×n kernel sampled on the (N+1)² node grid.
///
/// Triangular kernels store their one-sided diagonal value directly. Full
/// kernels that jump across the diagonal store the midpoint and keep both
/// one-sided values in `sides`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    n: usize,
    grid: GridSpec,
    support: Support,
    values: Vec<C64>,
    sides: Option<DiagonalSides>,
}

impl Kernel2D {
    pub fn zeros(n: usize, grid: GridSpec, support: Support) -> Self {
        Kernel2D {
            n,
            grid,
            support,
            values: vec![block::ZERO; grid.nodes() * grid.nodes() * n * n],
            sides: None,
        }
    }

    /// Fills each in-support node with `f(i, j, block)`.
    pub fn from_fn(
        n: usize,
        grid: GridSpec,
        support: Support,
        f: impl Fn(usize, usize, &mut [C64]),
    ) -> Self {
        let mut k = Kernel2D::zeros(n, grid, support);
        for i in 0..grid.nodes() {
            for j in 0..grid.nodes() {
                if in_support(support, i, j) {
                    f(i, j, k.get_mut(i, j));
                }
            }
        }
        k
    }

    /// Same as `from_fn` with rows computed in parallel.
    pub fn from_rows(
        n: usize,
        grid: GridSpec,
        support: Support,
        f: impl Fn(usize, usize, &mut [C64]) + Sync + Send,
    ) -> Self {
        let mut k = Kernel2D::zeros(n, grid, support);
        let m = grid.nodes();
        let nn = n * n;
        crate::par::for_each_chunk(&mut k.values, m * nn, |i, row| {
            for j in 0..m {
                if in_support(support, i, j) {
                    f(i, j, &mut row[j * nn..(j + 1) * nn]);
                }
            }
        });
        k
    }

    pub fn from_values(
        n: usize,
        grid: GridSpec,
        support: Support,
        values: Vec<C64>,
    ) -> Result<Self> {
        if values.len() != grid.nodes() * grid.nodes() * n * n {
            return Err(Error::Shape("kernel values have the wrong length".into()));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("kernel values".into()));
        }
        let mut k = Kernel2D {
            n,
            grid,
            support,
            values,
            sides: None,
        };
        k.mask();
        Ok(k)
    }

    /// Attaches one-sided diagonal values; the stored diagonal becomes their mean.
    pub fn with_sides(mut self, lower: Vec<C64>, upper: Vec<C64>) -> Result<Self> {
        let want = self.grid.nodes() * self.n * self.n;
        if lower.len() != want || upper.len() != want {
            return Err(Error::Shape("diagonal sides have the wrong length".into()));
        }
        let nn = self.n * self.n;
        for i in 0..self.grid.nodes() {
            let (lo, up) = (&lower[i * nn..(i + 1) * nn], &upper[i * nn..(i + 1) * nn]);
            let d = self.get_mut(i, i);
            for a in 0..nn {
                d[a] = 0.5 * (lo[a] + up[a]);
            }
        }
        self.sides = Some(DiagonalSides { lower, upper });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn sides(&self) -> Option<&DiagonalSides> {
        self.sides.as_ref()
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.grid.nodes() + j) * self.n * self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[C64] {
        let o = self.offset(i, j);
        &self.values[o..o + self.n * self.n]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let o = self.offset(i, j);
        let nn = self.n * self.n;
        &mut self.values[o..o + nn]
    }

    /// K(x_i, x_j), using the one-sided limit on the diagonal when available.
    #[inline]
    pub fn side(&self, i: usize, j: usize, side: Side) -> &[C64] {
        if i == j {
            if let Some(s) = &self.sides {
                let nn = self.n * self.n;
                let v = match side {
                    Side::Lower => &s.lower,
                    Side::Upper => &s.upper,
                };
                return &v[i * nn..(i + 1) * nn];
            }
        }
        self.get(i, j)
    }

    /// Zeroes everything outside the declared support.
    pub fn mask(&mut self) {
        let m = self.grid.nodes();
        let nn = self.n * self.n;
        for i in 0..m {
            for j in 0..m {
                if !in_support(self.support, i, j) {
                    let o = (i * m + j) * nn;
                    self.values[o..o + nn].fill(block::ZERO);
                }
            }
        }
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self.mask();
        self
    }

    /// Entrywise `self + s·other`; sides are combined when either has them.
    pub fn axpy(&self, s: C64, other: &Kernel2D) -> Result<Kernel2D> {
        if self.n != other.n || self.grid != other.grid {
            return Err(Error::Shape("kernels live on different grids".into()));
        }
        let support = if self.support == other.support {
            self.support
        } else {
            Support::Full
        };
        let mut out = self.clone();
        out.support = support;
        block::axpy(&mut out.values, s, &other.values);
        if self.sides.is_some() || other.sides.is_some() {
            let both = |side| {
                let mut v = Vec::with_capacity(self.grid.nodes() * self.n * self.n);
                for i in 0..self.grid.nodes() {
                    let mut b = self.side(i, i, side).to_vec();
                    block::axpy(&mut b, s, other.side(i, i, side));
                    v.extend(b);
                }
                v
            };
            out.sides = Some(DiagonalSides {
                lower: both(Side::Lower),
                upper: both(Side::Upper),
            });
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Kernel2D) -> Result<Kernel2D> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// Largest entry modulus over all nodes and diagonal sides.
    pub fn max_abs(&self) -> f64 {
        let mut m = block::max_abs(&self.values);
        if let Some(s) = &self.sides {
            m = m.max(block::max_abs(&s.lower)).max(block::max_abs(&s.upper));
        }
        m
    }

    /// Applies `f` to every block (sides included).
    pub fn map_blocks(&self, f: impl Fn(&[C64]) -> Vec<C64>) -> Kernel2D {
        let nn = self.n * self.n;
        let mut out = self.clone();
        for chunk in out.values.chunks_mut(nn) {
            let b = f(chunk);
            chunk.copy_from_slice(&b);
        }
        if let Some(s) = out.sides.as_mut() {
            for chunk in s.lower.chunks_mut(nn).chain(s.upper.chunks_mut(nn)) {
                let b = f(chunk);
                chunk.copy_from_slice(&b);
            }
        }
        out
    }
}

pub(crate) fn in_support(support: Support, i: usize, j: usize) -> bool {
    match support {
        Support::Lower => j <= i,
        Support::Upper => j >= i,
        Support::Full => true,
    }
}

/// J, B and the two meanings of `a`, all for block size r.
#[derive(Clone, Debug)]
#[allow(non_snake_case)]
pub struct StructuralConstants {
    pub r: usize,
    pub J: DMatrix<C64>,
    pub B: DMatrix<C64>,
    /// (I; I), 2r×r
    pub a_col: DMatrix<C64>,
    /// (I, -I), r×2r
    pub a_row: DMatrix<C64>,
}

impl StructuralConstants {
    pub fn new(r: usize) -> Self {
        let n = 2 * r;
        let one = C64::new(1.0, 0.0);
        let j = DMatrix::from_fn(n, n, |a, b| {
            if a != b {
                block::ZERO
            } else if a < r {
                -I
            } else {
                I
            }
        });
        let b = DMatrix::from_fn(n, n, |a, c| {
            if (a < r) != (c < r) && a % r == c % r {
                one
            } else {
                block::ZERO
            }
        });
        let a_col = DMatrix::from_fn(n, r, |a, c| if a % r == c { one } else { block::ZERO });
        let a_row = DMatrix::from_fn(r, n, |a, c| {
            if c == a {
                one
            } else if c == a + r {
                -one
            } else {
                block::ZERO
            }
        });
        StructuralConstants {
            r,
            J: j,
            B: b,
            a_col,
            a_row,
        }
    }

    /// J as a flat 2r×2r block.
    pub fn j_block(&self) -> Vec<C64> {
        block::from_dmatrix(&self.J)
    }

    pub fn b_block(&self) -> Vec<C64> {
        block::from_dmatrix(&self.B)
    }
}

/// Multiplies a 2r×2r block by B on the right (swaps column halves).
pub(crate) fn times_b(r: usize, x: &[C64]) -> Vec<C64> {
    let n = 2 * r;
    let mut out = block::zeros(n);
    for a in 0..n {
        for c in 0..n {
            let src = if c < r { c + r } else { c - r };
            out[a * n + c] = x[a * n + src];
        }
    }
    out
}

/// The spectral parameter λ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralParameter {
    pub lambda: C64,
}

impl SpectralParameter {
    pub fn new(lambda: C64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite("spectral parameter".into()));
        }
        Ok(SpectralParameter { lambda })
    }
}

impl fmt::Display for SpectralParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let z = self.lambda;
        if z.im < 0.0 {
            write!(f, "{}-{}i", z.re, -z.im)
        } else {
            write!(f, "{}+{}i", z.re, z.im)
        }
    }
}

impl FromStr for SpectralParameter {
    type Err = Error;

    /// Accepts "a", "bi", "a+bi", "a-bi", "i", "-i" (spaces ignored).
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Invalid(format!("cannot parse '{s}' as a+bi"));
        if t.is_empty() {
            return Err(bad());
        }
        let parse_im = |u: &str| -> Result<f64> {
            match u {
                "" | "+" => Ok(1.0),
                "-" => Ok(-1.0),
                _ => u.parse::<f64>().map_err(|_| bad()),
            }
        };
        let z = if let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) {
            // split at the last sign that is not part of an exponent
            let bytes = body.as_bytes();
            let mut split = None;
            for k in (1..bytes.len()).rev() {
                if (bytes[k] == b'+' || bytes[k] == b'-')
                    && !matches!(bytes[k - 1], b'e' | b'E')
                {
                    split = Some(k);
                    break;
                }
            }
            match split {
                Some(k) => C64::new(
                    body[..k].parse::<f64>().map_err(|_| bad())?,
                    parse_im(&body[k..])?,
                ),
                None => C64::new(0.0, parse_im(body)?),
            }
        } else {
            C64::new(t.parse::<f64>().map_err(|_| bad())?, 0.0)
        };
        SpectralParameter::new(z)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticEntry {
    pub name: String,
    pub value: f64,
    /// `None` marks an informational entry that is reported but not asserted.
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DiagnosticReport {
    pub entries: Vec<DiagnosticEntry>,
    pub n_cells: usize,
    pub runtime_s: f64,
}

impl DiagnosticReport {
    pub fn new(n_cells: usize) -> Self {
        DiagnosticReport {
            entries: Vec::new(),
            n_cells,
            runtime_s: 0.0,
        }
    }

    /// Records `value` against `tolerance`; non-finite values always fail.
    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.entries.push(DiagnosticEntry {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            pass: value.is_finite() && value <= tolerance,
        });
    }

    pub fn info(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push(DiagnosticEntry {
            name: name.into(),
            value,
            tolerance: None,
            pass: !value.is_nan(),
        });
    }

    pub fn extend(&mut self, prefix: &str, other: DiagnosticReport) {
        for mut e in other.entries {
            e.name = format!("{prefix}{}", e.name);
            self.entries.push(e);
        }
        self.runtime_s += other.runtime_s;
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&DiagnosticEntry> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_odd() {
        assert!(GridSpec::new(6).is_err());
        assert!(GridSpec::new(9).is_err());
        let w: f64 = grid(10).weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sharp_reverses_samples() {
        let g = grid(8);
        let h = Accelerant::scalar(g, |x| C64::new(x, 0.0)).unwrap();
        let hs = sharp(&h);
        for k in 0..h.len() {
            assert_eq!(hs.sample(k)[0], h.sample(4 * 8 - k)[0]);
            assert!((hs.sample(k)[0].re + h.xi(k)).abs() < 1e-15);
        }
        assert_eq!(sharp(&hs), h);
    }

    #[test]
    fn sharp_swaps_zero_limits() {
        let g = grid(8);
        let h = Accelerant::constant(g, C64::new(1.0, 0.0))
            .unwrap()
            .with_zero_limits(vec![C64::new(2.0, 0.0)], vec![C64::new(0.0, 0.0)])
            .unwrap();
        assert_eq!(h.sample(16)[0], C64::new(1.0, 0.0));
        let hs = sharp(&h);
        assert_eq!(hs.plus_limit()[0], C64::new(0.0, 0.0));
        assert_eq!(hs.minus_limit()[0], C64::new(2.0, 0.0));
    }

    #[test]
    fn block_embed_places_h_and_h_sharp() {
        let g = grid(8);
        let h = Accelerant::scalar(g, |x| C64::new(x, 0.0)).unwrap();
        let hh = block_embed_H(&h);
        assert_eq!(hh.r(), 2);
        for k in 0..h.len() {
            let b = hh.sample(k);
            let x = h.xi(k);
            assert!((b[0].re - x).abs() < 1e-15 && (b[3].re + x).abs() < 1e-15);
            assert_eq!(b[1], block::ZERO);
            assert_eq!(b[2], block::ZERO);
        }
    }

    #[test]
    fn potential_adjoint_examples() {
        let g = grid(8);
        let q = Potential::scalar(g, |_| C64::new(1.0, 1.0), |_| C64::new(2.0, 0.0)).unwrap();
        let a = potential_adjoint(&q);
        assert_eq!(a.q_plus(3)[0], C64::new(2.0, 0.0));
        assert_eq!(a.q_minus(3)[0], C64::new(1.0, -1.0));
        let f = Potential::scalar(g, |_| C64::new(0.0, -0.5), |_| C64::new(0.0, 0.5)).unwrap();
        assert_eq!(potential_adjoint(&f), f);
        assert_eq!(potential_adjoint(&a), q);
    }

    #[test]
    fn assembled_potential_anticommutes_with_j() {
        let g = grid(8);
        let q = Potential::from_fns(
            2,
            g,
            |x| vec![C64::new(x, 1.0), C64::new(0.0, 2.0), C64::new(-1.0, x), C64::new(3.0, 0.0)],
            |x| vec![C64::new(1.0, -x), C64::new(0.5, 0.0), C64::new(x * x, 0.0), C64::new(0.0, 1.0)],
        )
        .unwrap();
        let c = StructuralConstants::new(2);
        for i in 0..g.nodes() {
            let m = block::to_dmatrix(4, &q.full(i));
            let r = &m * &c.J + &c.J * &m;
            assert_eq!(r.camax(), 0.0);
        }
        assert!(assemble_potential(1, g, vec![block::ZERO; 9], vec![block::ZERO; 8]).is_err());
    }

    #[test]
    fn full_matrix_input_rejects_diagonal_blocks() {
        let g = grid(8);
        let mut mats = vec![vec![block::ZERO; 4]; 9];
        mats[3][1] = C64::new(1.0, 0.0);
        assert!(Potential::from_full(1, g, &mats).is_ok());
        mats[4][0] = C64::new(1.0, 0.0);
        assert!(matches!(
            Potential::from_full(1, g, &mats),
            Err(Error::NotOffDiagonal(_))
        ));
    }

    #[test]
    fn structural_identities() {
        for r in 1..=3 {
            let c = StructuralConstants::new(r);
            let n = 2 * r;
            let id = DMatrix::<C64>::identity(n, n);
            assert!((&c.J * &c.J + &id).camax() < 1e-15);
            assert!((&c.B * &c.B - &id).camax() < 1e-15);
            assert!((&c.J * &c.B + &c.B * &c.J).camax() < 1e-15);
            let idr = DMatrix::<C64>::identity(r, r);
            assert!((&c.a_row * c.a_row.adjoint() - idr * C64::new(2.0, 0.0)).camax() < 1e-15);
            assert!((&c.a_row * &c.a_col).camax() < 1e-15);
            let x: Vec<C64> = (0..n * n).map(|k| C64::new(k as f64, 1.0)).collect();
            let xb = block::from_dmatrix(&(block::to_dmatrix(n, &x) * &c.B));
            assert_eq!(times_b(r, &x), xb);
        }
    }

    #[test]
    fn b_reflects_free_solution() {
        let c = StructuralConstants::new(1);
        for &lam in &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.5)] {
            for k in 0..=10 {
                let x = k as f64 / 10.0;
                let phi0 = |x: f64| {
                    nalgebra::DVector::from_vec(vec![(I * lam * x).exp(), (-I * lam * x).exp()])
                };
                assert!((&c.B * phi0(x) - phi0(-x)).camax() < 1e-15);
            }
        }
    }

    #[test]
    fn lambda_parsing() {
        let p = |s: &str| s.parse::<SpectralParameter>().unwrap().lambda;
        assert_eq!(p("1+0.5i"), C64::new(1.0, 0.5));
        assert_eq!(p("1-0.5i"), C64::new(1.0, -0.5));
        assert_eq!(p("-2i"), C64::new(0.0, -2.0));
        assert_eq!(p("i"), C64::new(0.0, 1.0));
        assert_eq!(p("3"), C64::new(3.0, 0.0));
        assert_eq!(p("1e-3+2e+1i"), C64::new(1e-3, 20.0));
        assert!("1+zi".parse::<SpectralParameter>().is_err());
        assert!("".parse::<SpectralParameter>().is_err());
    }

    #[test]
    fn kernel_masking() {
        let g = grid(8);
        let k = Kernel2D::from_fn(1, g, Support::Full, |_, _, b| b[0] = C64::new(1.0, 0.0))
            .with_support(Support::Lower);
        for i in 0..9 {
            for j in 0..9 {
                let want = if j <= i { 1.0 } else { 0.0 };
                assert_eq!(k.get(i, j)[0].re, want);
            }
        }
    }
}
