//! Matrix-free linear operators on realified vector spaces.
//!
//! Every vector is a flat `[f64]`. A complex space of `d` points is stored
//! as `2d` interleaved `(re, im)` pairs, so the Euclidean dot product of two
//! realified vectors is the real part of their Hermitian inner product and
//! every space below is a real Hilbert space.
//!
//! Operators implement [`LinearMap`] and are shared through the cheap,
//! clonable [`LinOp`] handle, which also carries an optional upper bound on
//! the operator norm.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    /// Number of real components per point.
    pub fn components(self) -> usize {
        match self {
            Field::Real => 1,
            Field::Complex => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VecSpace {
    shape: Vec<usize>,
    field: Field,
}

impl VecSpace {
    pub fn new(shape: Vec<usize>, field: Field) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::UnsupportedShape(format!(
                "space shape {shape:?} has zero total dimension"
            )));
        }
        Ok(Self { shape, field })
    }

    pub fn real(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), Field::Real)
    }

    pub fn complex(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), Field::Complex)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn field(&self) -> Field {
        self.field
    }

    /// Number of grid points (complex entries count once).
    pub fn points(&self) -> usize {
        self.shape.iter().product()
    }

    /// Realified dimension.
    pub fn len(&self) -> usize {
        self.points() * self.field.components()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Behaviour shared by every operator. Implementations may assume slice
/// lengths match `domain().len()` and `codomain().len()`; [`LinOp`] checks.
pub trait LinearMap: Send + Sync + fmt::Debug {
    fn domain(&self) -> &VecSpace;
    fn codomain(&self) -> &VecSpace;
    fn forward(&self, x: &[f64], out: &mut [f64]);
    fn adjoint(&self, y: &[f64], out: &mut [f64]);

    /// Analytic upper bound on the operator norm, if one is known.
    fn norm_bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone)]
pub struct LinOp {
    map: Arc<dyn LinearMap>,
    cached_norm: Option<f64>,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinOp")
            .field("map", &self.map)
            .field("cached_norm", &self.cached_norm)
            .finish()
    }
}

impl LinOp {
    pub fn new(map: impl LinearMap + 'static) -> Self {
        let cached_norm = map.norm_bound();
        Self {
            map: Arc::new(map),
            cached_norm,
        }
    }

    pub fn from_arc(map: Arc<dyn LinearMap>) -> Self {
        let cached_norm = map.norm_bound();
        Self { map, cached_norm }
    }

    pub fn domain(&self) -> &VecSpace {
        self.map.domain()
    }

    pub fn codomain(&self) -> &VecSpace {
        self.map.codomain()
    }

    /// Upper bound on `‖L‖`, when known.
    pub fn cached_norm(&self) -> Option<f64> {
        self.cached_norm
    }

    /// Records an upper bound on the norm. Callers that compare against
    /// strict inequalities should inflate estimates slightly before storing.
    pub fn with_cached_norm(mut self, bound: f64) -> Self {
        self.cached_norm = Some(bound);
        self
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply", self.domain().len(), x.len())?;
        let mut out = self.codomain().zeros();
        self.map.forward(x, &mut out);
        Ok(out)
    }

    pub fn adjoint_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint_apply", self.codomain().len(), y.len())?;
        let mut out = self.domain().zeros();
        self.map.adjoint(y, &mut out);
        Ok(out)
    }

    /// Unchecked variant for hot loops; lengths are only debug-asserted.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.domain().len());
        debug_assert_eq!(out.len(), self.codomain().len());
        self.map.forward(x, out);
    }

    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.codomain().len());
        debug_assert_eq!(out.len(), self.domain().len());
        self.map.adjoint(y, out);
    }

    /// `self ∘ inner`
    pub fn compose(&self, inner: &LinOp) -> Result<LinOp> {
        if inner.codomain().len() != self.domain().len() {
            return Err(Error::Dimension {
                context: "compose",
                expected: self.domain().len(),
                found: inner.codomain().len(),
            });
        }
        Ok(LinOp::new(Composite {
            outer: self.clone(),
            inner: inner.clone(),
        }))
    }
}

/// `x ↦ x`
#[derive(Debug)]
pub struct Identity {
    space: VecSpace,
}

pub fn identity(space: VecSpace) -> LinOp {
    LinOp::new(Identity { space })
}

impl LinearMap for Identity {
    fn domain(&self) -> &VecSpace {
        &self.space
    }
    fn codomain(&self) -> &VecSpace {
        &self.space
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

#[derive(Debug)]
pub struct Zero {
    domain: VecSpace,
    codomain: VecSpace,
}

pub fn zero(domain: VecSpace, codomain: VecSpace) -> LinOp {
    LinOp::new(Zero { domain, codomain })
}

impl LinearMap for Zero {
    fn domain(&self) -> &VecSpace {
        &self.domain
    }
    fn codomain(&self) -> &VecSpace {
        &self.codomain
    }
    fn forward(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn adjoint(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Real dense matrix stored row-major.
#[derive(Debug)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    domain: VecSpace,
    codomain: VecSpace,
}

pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<LinOp> {
    check_len("dense matrix data", rows * cols, data.len())?;
    Ok(LinOp::new(Dense {
        rows,
        cols,
        data,
        domain: VecSpace::real(&[cols])?,
        codomain: VecSpace::real(&[rows])?,
    }))
}

impl LinearMap for Dense {
    fn domain(&self) -> &VecSpace {
        &self.domain
    }
    fn codomain(&self) -> &VecSpace {
        &self.codomain
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for r in 0..self.rows {
            axpy(y[r], &self.data[r * self.cols..(r + 1) * self.cols], out);
        }
    }
}

/// Pointwise multiplication by a fixed complex or real field.
#[derive(Debug)]
pub struct Diagonal {
    values: DiagValues,
    space: VecSpace,
}

#[derive(Debug)]
enum DiagValues {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

pub fn diagonal_real(shape: &[usize], values: Vec<f64>) -> Result<LinOp> {
    let space = VecSpace::real(shape)?;
    check_len("diagonal", space.points(), values.len())?;
    Ok(LinOp::new(Diagonal {
        values: DiagValues::Real(values),
        space,
    }))
}

pub fn diagonal_complex(shape: &[usize], values: Vec<Complex64>) -> Result<LinOp> {
    let space = VecSpace::complex(shape)?;
    check_len("diagonal", space.points(), values.len())?;
    Ok(LinOp::new(Diagonal {
        values: DiagValues::Complex(values),
        space,
    }))
}

impl Diagonal {
    fn apply_with(&self, x: &[f64], out: &mut [f64], conjugate: bool) {
        match &self.values {
            DiagValues::Real(d) => {
                for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
                    *o = di * xi;
                }
            }
            DiagValues::Complex(d) => {
                for (k, c) in d.iter().enumerate() {
                    let c = if conjugate { c.conj() } else { *c };
                    let v = c * Complex64::new(x[2 * k], x[2 * k + 1]);
                    out[2 * k] = v.re;
                    out[2 * k + 1] = v.im;
                }
            }
        }
    }
}

impl LinearMap for Diagonal {
    fn domain(&self) -> &VecSpace {
        &self.space
    }
    fn codomain(&self) -> &VecSpace {
        &self.space
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        self.apply_with(x, out, false);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.apply_with(y, out, true);
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(match &self.values {
            DiagValues::Real(d) => d.iter().fold(0.0, |m, v| m.max(v.abs())),
            DiagValues::Complex(d) => d.iter().fold(0.0, |m, v| m.max(v.norm())),
        })
    }
}

/// Unitary 2-D discrete Fourier transform (`1/√N` in both directions).
pub struct Dft2 {
    space: VecSpace,
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dft2({}x{})", self.rows, self.cols)
    }
}

pub fn dft2(shape: [usize; 2]) -> Result<LinOp> {
    let [rows, cols] = shape;
    let space = VecSpace::complex(&shape)?;
    let mut planner = FftPlanner::new();
    Ok(LinOp::new(Dft2 {
        space,
        rows,
        cols,
        row_fwd: planner.plan_fft_forward(cols),
        row_inv: planner.plan_fft_inverse(cols),
        col_fwd: planner.plan_fft_forward(rows),
        col_inv: planner.plan_fft_inverse(rows),
    }))
}

impl Dft2 {
    fn transform(&self, x: &[f64], out: &mut [f64], inverse: bool) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut buf: Vec<Complex64> = x
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        row_fft.process(&mut buf);
        let mut col = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            col_fft.process(&mut col);
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
        let scale = 1.0 / ((self.rows * self.cols) as f64).sqrt();
        for (k, v) in buf.iter().enumerate() {
            out[2 * k] = v.re * scale;
            out[2 * k + 1] = v.im * scale;
        }
    }
}

impl LinearMap for Dft2 {
    fn domain(&self) -> &VecSpace {
        &self.space
    }
    fn codomain(&self) -> &VecSpace {
        &self.space
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        self.transform(x, out, false);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.transform(y, out, true);
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Keeps the grid points where `mask` is set, in row-major order.
#[derive(Debug)]
pub struct Subsample {
    kept: Vec<usize>,
    domain: VecSpace,
    codomain: VecSpace,
}

pub fn subsample(domain: VecSpace, mask: &[bool]) -> Result<LinOp> {
    check_len("subsampling mask", domain.points(), mask.len())?;
    let kept: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    if kept.is_empty() {
        return Err(Error::InvalidParameter("subsampling mask keeps nothing".into()));
    }
    let codomain = VecSpace::new(vec![kept.len()], domain.field())?;
    Ok(LinOp::new(Subsample {
        kept,
        domain,
        codomain,
    }))
}

impl LinearMap for Subsample {
    fn domain(&self) -> &VecSpace {
        &self.domain
    }
    fn codomain(&self) -> &VecSpace {
        &self.codomain
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let c = self.domain.field().components();
        for (slot, &k) in self.kept.iter().enumerate() {
            out[slot * c..(slot + 1) * c].copy_from_slice(&x[k * c..(k + 1) * c]);
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let c = self.domain.field().components();
        out.fill(0.0);
        for (slot, &k) in self.kept.iter().enumerate() {
            out[k * c..(k + 1) * c].copy_from_slice(&y[slot * c..(slot + 1) * c]);
        }
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Treatment of the last difference along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// The difference leaving the grid is zero.
    #[default]
    Neumann,
    /// The grid is extended by zeros, so the last difference is `-x`.
    ZeroExtension,
}

/// Forward differences along both axes of a 2-D grid, stacked as
/// `[axis, row, col]` with axis 0 vertical and axis 1 horizontal.
#[derive(Debug)]
pub struct Gradient {
    rows: usize,
    cols: usize,
    boundary: Boundary,
    domain: VecSpace,
    codomain: VecSpace,
}

pub fn gradient_op(shape: &[usize], field: Field, boundary: Boundary) -> Result<LinOp> {
    if shape.len() != 2 {
        return Err(Error::UnsupportedShape(format!(
            "gradient needs a 2-D grid, got {}-D shape {shape:?}",
            shape.len()
        )));
    }
    let (rows, cols) = (shape[0], shape[1]);
    if rows * cols < 2 {
        return Err(Error::UnsupportedShape(format!(
            "gradient grid {rows}x{cols} has no differences"
        )));
    }
    Ok(LinOp::new(Gradient {
        rows,
        cols,
        boundary,
        domain: VecSpace::new(vec![rows, cols], field)?,
        codomain: VecSpace::new(vec![2, rows, cols], field)?,
    }))
}

impl LinearMap for Gradient {
    fn domain(&self) -> &VecSpace {
        &self.domain
    }
    fn codomain(&self) -> &VecSpace {
        &self.codomain
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let nc = self.domain.field().components();
        let (r, c) = (self.rows, self.cols);
        let plane = r * c * nc;
        let zero_ext = self.boundary == Boundary::ZeroExtension;
        for i in 0..r {
            for j in 0..c {
                for k in 0..nc {
                    let here = x[(i * c + j) * nc + k];
                    let at = (i * c + j) * nc + k;
                    out[at] = if i + 1 < r {
                        x[((i + 1) * c + j) * nc + k] - here
                    } else if zero_ext {
                        -here
                    } else {
                        0.0
                    };
                    out[plane + at] = if j + 1 < c {
                        x[(i * c + j + 1) * nc + k] - here
                    } else if zero_ext {
                        -here
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let nc = self.domain.field().components();
        let (r, c) = (self.rows, self.cols);
        let plane = r * c * nc;
        let zero_ext = self.boundary == Boundary::ZeroExtension;
        for i in 0..r {
            for j in 0..c {
                for k in 0..nc {
                    let at = (i * c + j) * nc + k;
                    let mut v = 0.0;
                    if i > 0 {
                        v += y[((i - 1) * c + j) * nc + k];
                    }
                    if i + 1 < r || zero_ext {
                        v -= y[at];
                    }
                    if j > 0 {
                        v += y[plane + (i * c + j - 1) * nc + k];
                    }
                    if j + 1 < c || zero_ext {
                        v -= y[plane + at];
                    }
                    out[at] = v;
                }
            }
        }
    }

    fn norm_bound(&self) -> Option<f64> {
        Some(8f64.sqrt())
    }
}

#[derive(Debug)]
struct Composite {
    outer: LinOp,
    inner: LinOp,
}

impl LinearMap for Composite {
    fn domain(&self) -> &VecSpace {
        self.inner.domain()
    }
    fn codomain(&self) -> &VecSpace {
        self.outer.codomain()
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let mut mid = self.inner.codomain().zeros();
        self.inner.apply_into(x, &mut mid);
        self.outer.apply_into(&mid, out);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut mid = self.outer.domain().zeros();
        self.outer.adjoint_into(y, &mut mid);
        self.inner.adjoint_into(&mid, out);
    }
    fn norm_bound(&self) -> Option<f64> {
        Some(self.outer.cached_norm()? * self.inner.cached_norm()?)
    }
}

/// Stacks operators that share a domain: `(Ax)_i = A_i x`,
/// `A^* y = Σ_i A_i^* y_i`.
#[derive(Debug, Clone)]
pub struct BlockRowOp {
    rows: Vec<LinOp>,
    offsets: Vec<usize>,
    codomain: VecSpace,
}

impl BlockRowOp {
    pub fn new(rows: Vec<LinOp>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidParameter("block operator needs at least one row".into()))?;
        let domain_len = first.domain().len();
        let mut offsets = vec![0];
        for row in &rows {
            check_len("block row domain", domain_len, row.domain().len())?;
            offsets.push(offsets.last().unwrap() + row.codomain().len());
        }
        let codomain = VecSpace::real(&[*offsets.last().unwrap()])?;
        Ok(Self {
            rows,
            offsets,
            codomain,
        })
    }

    pub fn rows(&self) -> &[LinOp] {
        &self.rows
    }

    pub fn n_blocks(&self) -> usize {
        self.rows.len()
    }

    /// Start offset of each block in the stacked codomain, plus the total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block<'a>(&self, y: &'a [f64], i: usize) -> &'a [f64] {
        &y[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn into_linop(self) -> LinOp {
        LinOp::new(self)
    }
}

impl LinearMap for BlockRowOp {
    fn domain(&self) -> &VecSpace {
        self.rows[0].domain()
    }
    fn codomain(&self) -> &VecSpace {
        &self.codomain
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            row.apply_into(x, &mut out[self.offsets[i]..self.offsets[i + 1]]);
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = self.domain().zeros();
        for (i, row) in self.rows.iter().enumerate() {
            row.adjoint_into(&y[self.offsets[i]..self.offsets[i + 1]], &mut tmp);
            axpy(1.0, &tmp, out);
        }
    }
    fn norm_bound(&self) -> Option<f64> {
        let mut sq = 0.0;
        for row in &self.rows {
            sq += row.cached_norm()?.powi(2);
        }
        Some(sq.sqrt())
    }
}

/// Result of a power-method run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out before the tolerance was met; the value
    /// is still the last estimate.
    pub converged: bool,
}

fn random_start(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest eigenvalue of a self-adjoint positive semidefinite map given by
/// `apply`, by power iteration from a seeded start.
fn power_iteration(
    len: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> Result<NormEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("power-method tolerance {tol} must be positive")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("power method needs max_iter >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_start(len, &mut rng);
    let mut w = vec![0.0; len];
    let mut redrawn = false;
    let mut previous: Option<f64> = None;

    let mut k = 0;
    while k < max_iter {
        let nv = norm(&v);
        if nv == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            });
        }
        v.iter_mut().for_each(|e| *e /= nv);
        apply(&v, &mut w);
        let rayleigh = dot(&v, &w);
        k += 1;

        if k == 1 && rayleigh < 1e-14 && !redrawn {
            // degenerate start; one fresh draw before trusting a zero
            redrawn = true;
            v = random_start(len, &mut rng);
            continue;
        }
        if let Some(prev) = previous {
            if (rayleigh - prev).abs() <= tol * rayleigh.abs() {
                return Ok(NormEstimate {
                    value: rayleigh.max(0.0),
                    iterations: k,
                    converged: true,
                });
            }
        }
        if rayleigh == 0.0 && norm(&w) == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            });
        }
        previous = Some(rayleigh);
        std::mem::swap(&mut v, &mut w);
    }
    Ok(NormEstimate {
        value: previous.unwrap_or(0.0).max(0.0),
        iterations: k,
        converged: false,
    })
}

/// Estimates `‖L‖ = sqrt(λ_max(L^*L))` by power iteration on `L^*L`.
pub fn operator_norm(op: &LinOp, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
    let mut mid = op.codomain().zeros();
    let est = power_iteration(op.domain().len(), tol, max_iter, seed, |v, w| {
        op.apply_into(v, &mut mid);
        op.adjoint_into(&mid, w);
    })?;
    Ok(NormEstimate {
        value: est.value.sqrt(),
        ..est
    })
}

/// Largest eigenvalue of a self-adjoint PSD operator (its norm), by power
/// iteration on the operator itself.
pub fn psd_norm(op: &LinOp, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
    if op.domain().len() != op.codomain().len() {
        return Err(Error::Dimension {
            context: "psd_norm (operator must be square)",
            expected: op.domain().len(),
            found: op.codomain().len(),
        });
    }
    power_iteration(op.domain().len(), tol, max_iter, seed, |v, w| op.apply_into(v, w))
}

/// Assembles the operator as a dense matrix by applying it to basis vectors.
pub fn to_dense(op: &LinOp) -> DMatrix<f64> {
    let (n_in, n_out) = (op.domain().len(), op.codomain().len());
    let mut m = DMatrix::zeros(n_out, n_in);
    let mut e = vec![0.0; n_in];
    let mut col = vec![0.0; n_out];
    for j in 0..n_in {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        e[j] = 0.0;
        for (i, v) in col.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Largest eigenvalue of the symmetric part of a dense square matrix.
pub fn dense_top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}
