//! Dense symmetric / Hermitian matrices, Jacobi eigensolvers, pseudoinverses,
//! range tests and the constrained Rayleigh-quotient maximizer.
//!
//! Dimensions here are small (tens), so everything is a plain row-major
//! `Vec` and every eigenproblem is solved by cyclic Jacobi rotations.
//!
//! Information matrices built from m-shot models have condition numbers far
//! beyond 1e12 while still being well-posed after a diagonal rescaling.  The
//! range test and the Rayleigh maximizer therefore work on the equilibrated
//! matrix `S⁻¹ M S⁻¹` with `S = diag(√M_jj)`; the supremum of the quotient is
//! invariant under this congruence, the rank decision is not.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Numerical thresholds shared by the bound computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative eigenvalue cutoff for pseudoinverses.
    pub rcond: f64,
    /// Relative singular-value cutoff for square-root (factor) spans.
    pub span_rcond: f64,
    /// Range-membership tolerance, scaled by `1 + ‖v‖`.
    pub range_tol: f64,
    /// Allowed negative eigenvalue, relative to the largest one.
    pub psd_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rcond: 1e-12,
            span_rcond: 1e-10,
            range_tol: 1e-8,
            psd_tol: 1e-10,
        }
    }
}

// ---------------------------------------------------------------------------
// Real symmetric matrices
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (j, &d) in diag.iter().enumerate() {
            m.data[j * m.dim + j] = d;
        }
        m
    }

    /// Builds a matrix from the upper triangle of `f` (`j <= k`) and mirrors it.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for j in 0..dim {
            for k in j..dim {
                let v = f(j, k);
                m.data[j * dim + k] = v;
                m.data[k * dim + j] = v;
            }
        }
        m
    }

    /// Square row list, symmetrized as `(M + Mᵀ)/2`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("matrix rows must form a square array"));
        }
        Ok(Self::from_upper(dim, |j, k| {
            0.5 * (rows[j][k] + rows[k][j])
        }))
    }

    pub fn outer(v: &[f64]) -> Self {
        Self::from_upper(v.len(), |j, k| v[j] * v[k])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.dim + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[j * self.dim + k] = v;
        self.data[k * self.dim + j] = v;
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.get(j, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .map(|r| r.to_vec())
            .take(self.dim)
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim.max(1))
            .take(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Plain (non-symmetric in general) product, returned as rows.
    pub fn matmul(&self, other: &SymMatrix) -> Vec<Vec<f64>> {
        let n = self.dim;
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| (0..n).map(|l| self.get(j, l) * other.get(l, k)).sum())
                    .collect()
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Complex matrices
// ---------------------------------------------------------------------------

/// General square complex matrix, used for products and unitaries.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |j, k| {
            if j == k {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for j in 0..dim {
            for k in 0..dim {
                data.push(f(j, k));
            }
        }
        Self { dim, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<Complex64>]) -> Self {
        let dim = cols.len();
        Self::from_fn(dim, |j, k| cols[k][j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.data[j * self.dim + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: Complex64) {
        self.data[j * self.dim + k] = v;
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for j in 0..n {
            for l in 0..n {
                let a = self.data[j * n + l];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..n {
                    out.data[j * n + k] += a * other.data[l * n + k];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        Self::from_fn(self.dim, |j, k| self.get(k, j).conj())
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        Self::from_fn(self.dim, |j, k| self.get(j, k) + other.get(j, k))
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        Self::from_fn(self.dim, |j, k| self.get(j, k) - other.get(j, k))
    }

    pub fn scale(&self, alpha: Complex64) -> CMatrix {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|j| self.get(j, j)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> HermMatrix {
        HermMatrix::from_fn(self.dim, |j, k| self.get(j, k))
    }
}

// ---------------------------------------------------------------------------
// Hermitian matrices
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct HermMatrix {
    inner: CMatrix,
}

impl HermMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            inner: CMatrix::zeros(dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: CMatrix::identity(dim),
        }
    }

    /// Hermitizes `f`: entry `(j,k)` is `(f(j,k) + conj f(k,j))/2`, with a
    /// real diagonal.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut inner = CMatrix::zeros(dim);
        for j in 0..dim {
            inner.set(j, j, Complex64::new(f(j, j).re, 0.0));
            for k in j + 1..dim {
                let v = 0.5 * (f(j, k) + f(k, j).conj());
                inner.set(j, k, v);
                inner.set(k, j, v.conj());
            }
        }
        Self { inner }
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("matrix rows must form a square array"));
        }
        Ok(Self::from_fn(dim, |j, k| rows[j][k]))
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |j, k| {
            if j == k {
                Complex64::new(diag[j], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.inner.get(j, k)
    }

    pub fn as_cmatrix(&self) -> &CMatrix {
        &self.inner
    }

    pub fn to_rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.dim())
            .map(|j| (0..self.dim()).map(|k| self.get(j, k)).collect())
            .collect()
    }

    pub fn mul(&self, other: &HermMatrix) -> CMatrix {
        self.inner.mul(&other.inner)
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace().re
    }

    /// `Tr(AB)`; real when both are Hermitian, up to rounding.
    pub fn trace_product(&self, other: &HermMatrix) -> Complex64 {
        let n = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            for k in 0..n {
                acc += self.get(j, k) * other.get(k, j);
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    pub fn scale(&self, alpha: f64) -> HermMatrix {
        Self {
            inner: self.inner.scale(Complex64::new(alpha, 0.0)),
        }
    }

    pub fn add(&self, other: &HermMatrix) -> HermMatrix {
        Self {
            inner: self.inner.add(&other.inner),
        }
    }

    pub fn sub(&self, other: &HermMatrix) -> HermMatrix {
        Self {
            inner: self.inner.sub(&other.inner),
        }
    }

    /// `U A U†`.
    pub fn conjugate_by(&self, u: &CMatrix) -> HermMatrix {
        u.mul(&self.inner).mul(&u.adjoint()).hermitian_part()
    }

    /// `‖AB − BA‖_F`.
    pub fn commutator_norm(&self, other: &HermMatrix) -> f64 {
        self.mul(other).sub(&other.mul(self)).frobenius_norm()
    }

    /// Real coordinates (re and im parts of every entry) for Frobenius geometry.
    pub fn to_real_vec(&self) -> Vec<f64> {
        self.inner.data.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    /// Function of a Hermitian matrix through its eigendecomposition.
    pub fn map_eigen(&self, f: impl Fn(f64) -> f64) -> Result<HermMatrix> {
        let e = eig_herm(self)?;
        let n = self.dim();
        let fv: Vec<f64> = e.values.iter().map(|&v| f(v)).collect();
        Ok(HermMatrix::from_fn(n, |j, k| {
            (0..n)
                .map(|a| e.vectors[a][j] * e.vectors[a][k].conj() * fv[a])
                .sum()
        }))
    }
}

// ---------------------------------------------------------------------------
// Eigendecomposition
// ---------------------------------------------------------------------------

/// Eigenvalues in ascending order; `vectors[a]` is the unit eigenvector for
/// `values[a]`.
#[derive(Clone, Debug)]
pub struct EigenDecomp<T> {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<T>>,
}

pub fn eig_sym(m: &SymMatrix) -> Result<EigenDecomp<f64>> {
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let mut converged = n <= 1;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].abs())
            .sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        let thresh = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let g = 100.0 * apq.abs();
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }
                let (c, s) = jacobi_angle(app, aqq, apq.abs(), g);
                let s = s * apq.signum();
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigNoConverge { sweeps: MAX_SWEEPS });
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|c| {
            let mut col: Vec<f64> = (0..n).map(|r| v[r * n + c]).collect();
            if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-12) {
                if first < 0.0 {
                    col.iter_mut().for_each(|x| *x = -*x);
                }
            }
            (a[c * n + c], col)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (values, vectors) = pairs.into_iter().unzip();
    Ok(EigenDecomp { values, vectors })
}

pub fn eig_herm(m: &HermMatrix) -> Result<EigenDecomp<Complex64>> {
    let n = m.dim();
    let zero = Complex64::new(0.0, 0.0);
    let mut a = m.inner.data.clone();
    let mut v = CMatrix::identity(n).data;
    let mut converged = n <= 1;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].norm())
            .sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        let thresh = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let r = apq.norm();
                let g = 100.0 * r;
                let (app, aqq) = (a[p * n + p].re, a[q * n + q].re);
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = zero;
                    a[q * n + p] = zero;
                    continue;
                }
                if r <= thresh {
                    continue;
                }
                let (c, s) = jacobi_angle(app, aqq, r, g);
                // U = diag(1, e^{-iφ}) · J, so that U† A U kills the (p,q) entry.
                let phase = apq / r;
                let (upp, upq) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
                let (uqp, uqq) = (-phase.conj() * s, phase.conj() * c);
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = akp * upp + akq * uqp;
                    a[k * n + q] = akp * upq + akq * uqq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = upp.conj() * apk + uqp.conj() * aqk;
                    a[q * n + k] = upq.conj() * apk + uqq.conj() * aqk;
                }
                a[p * n + q] = zero;
                a[q * n + p] = zero;
                a[p * n + p].im = 0.0;
                a[q * n + q].im = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = vkp * upp + vkq * uqp;
                    v[k * n + q] = vkp * upq + vkq * uqq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigNoConverge { sweeps: MAX_SWEEPS });
    }
    let mut pairs: Vec<(f64, Vec<Complex64>)> = (0..n)
        .map(|c| {
            let mut col: Vec<Complex64> = (0..n).map(|r| v[r * n + c]).collect();
            if let Some(first) = col.iter().copied().find(|x| x.norm() > 1e-12) {
                let fix = first.conj() / first.norm();
                col.iter_mut().for_each(|x| *x *= fix);
            }
            (a[c * n + c].re, col)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (values, vectors) = pairs.into_iter().unzip();
    Ok(EigenDecomp { values, vectors })
}

/// Rotation `(c, s)` annihilating a real off-diagonal entry `r ≥ 0` between
/// diagonals `app`, `aqq`; `g = 100 r` is the overflow guard.
fn jacobi_angle(app: f64, aqq: f64, r: f64, g: f64) -> (f64, f64) {
    let h = aqq - app;
    let t = if h.abs() + g == h.abs() {
        r / h
    } else {
        let theta = 0.5 * h / r;
        let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, t * c)
}

// ---------------------------------------------------------------------------
// Pseudoinverse, range, Rayleigh
// ---------------------------------------------------------------------------

pub fn pinv(m: &SymMatrix, rcond: f64) -> Result<SymMatrix> {
    let e = eig_sym(m)?;
    let cut = rcond * e.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = SymMatrix::zeros(m.dim);
    for (lam, vec) in e.values.iter().zip(&e.vectors) {
        if lam.abs() > cut {
            out.add_scaled(1.0 / lam, &SymMatrix::outer(vec));
        }
    }
    Ok(out)
}

/// Eigendecomposition of `S⁻¹ M S⁻¹` with `S = diag(√M_jj)` (unit scale on
/// non-positive diagonals).
struct Equilibrated {
    scale: Vec<f64>,
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    cut: f64,
}

impl Equilibrated {
    fn new(m: &SymMatrix, rcond: f64) -> Result<Self> {
        let scale: Vec<f64> = m
            .diag()
            .iter()
            .map(|&d| if d > 0.0 { d.sqrt() } else { 1.0 })
            .collect();
        let k = SymMatrix::from_upper(m.dim, |j, l| m.get(j, l) / (scale[j] * scale[l]));
        let e = eig_sym(&k)?;
        let cut = rcond * e.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(Self {
            scale,
            values: e.values,
            vectors: e.vectors,
            cut,
        })
    }

    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&a| self.values[a].abs() > self.cut)
    }

    fn rank(&self) -> usize {
        self.kept().count()
    }

    /// Orthonormal basis of `Range(M) = S · Range(K)`.
    fn range_basis(&self) -> Vec<Vec<f64>> {
        let cols = self
            .kept()
            .map(|a| {
                self.vectors[a]
                    .iter()
                    .zip(&self.scale)
                    .map(|(u, s)| u * s)
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>();
        orthonormalize(cols)
    }
}

/// Modified Gram–Schmidt, applied twice; near-dependent columns are dropped.
fn orthonormalize(cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut c in cols {
        let n0 = norm(&c);
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let d = dot(q, &c);
                c.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n1 = norm(&c);
        if n1 > 1e-10 * n0 {
            basis.push(c.into_iter().map(|x| x / n1).collect());
        }
    }
    basis
}

fn project_out(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut r = v.to_vec();
    for q in basis {
        let d = dot(q, &r);
        r.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
    }
    r
}

/// Numerical rank after diagonal equilibration.
pub fn rank(m: &SymMatrix, rcond: f64) -> Result<usize> {
    Ok(Equilibrated::new(m, rcond)?.rank())
}

/// `‖(I − Π_M) v‖ ≤ tol·(1 + ‖v‖)` with `Π_M` the projector onto `Range(M)`.
pub fn in_range(m: &SymMatrix, v: &[f64], tol: f64) -> Result<bool> {
    Ok(range_residual(m, v, Tolerances::default().rcond)? <= tol * (1.0 + norm(v)))
}

/// Norm of the component of `v` outside `Range(M)`.
pub fn range_residual(m: &SymMatrix, v: &[f64], rcond: f64) -> Result<f64> {
    assert_eq!(m.dim, v.len(), "dimension mismatch");
    let basis = Equilibrated::new(m, rcond)?.range_basis();
    Ok(norm(&project_out(&basis, v)))
}

#[derive(Clone, Debug, PartialEq)]
pub enum RayleighResult {
    Finite { value: f64, argvec: Vec<f64> },
    Unbounded,
}

impl RayleighResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            RayleighResult::Finite { value, .. } => Some(*value),
            RayleighResult::Unbounded => None,
        }
    }
}

/// `sup_x (μᵀx)² / xᵀMx` over `x` with `xᵀMx > 0`.
pub fn rayleigh_max(mu: &[f64], m: &SymMatrix) -> Result<RayleighResult> {
    rayleigh_max_with(mu, m, &Tolerances::default())
}

pub fn rayleigh_max_with(mu: &[f64], m: &SymMatrix, tol: &Tolerances) -> Result<RayleighResult> {
    assert_eq!(m.dim, mu.len(), "dimension mismatch");
    let raw = eig_sym(m)?;
    let max = raw.values.last().copied().unwrap_or(0.0).max(0.0);
    let min = raw.values.first().copied().unwrap_or(0.0);
    if min < -tol.psd_tol * max || (max == 0.0 && min < 0.0) {
        return Err(Error::NotPsd { min, max });
    }
    let eq = Equilibrated::new(m, tol.rcond)?;
    let basis = eq.range_basis();
    if norm(&project_out(&basis, mu)) > tol.range_tol * (1.0 + norm(mu)) {
        return Ok(RayleighResult::Unbounded);
    }
    // value = yᵀK⁺y with y = S⁻¹μ; argvec = S⁻¹K⁺y projected onto Range(M).
    let y: Vec<f64> = mu.iter().zip(&eq.scale).map(|(a, s)| a / s).collect();
    let mut value = 0.0;
    let mut z = vec![0.0; y.len()];
    for a in eq.kept() {
        let c = dot(&eq.vectors[a], &y) / eq.values[a];
        value += c * dot(&eq.vectors[a], &y);
        z.iter_mut()
            .zip(&eq.vectors[a])
            .for_each(|(zi, ui)| *zi += c * ui);
    }
    let x: Vec<f64> = z.iter().zip(&eq.scale).map(|(zi, s)| zi / s).collect();
    let mut argvec = vec![0.0; x.len()];
    for q in &basis {
        let d = dot(q, &x);
        argvec.iter_mut().zip(q).for_each(|(a, qi)| *a += d * qi);
    }
    Ok(RayleighResult::Finite {
        value: value.max(0.0),
        argvec,
    })
}

// ---------------------------------------------------------------------------
// Column spans (square-root route)
// ---------------------------------------------------------------------------

/// Orthonormal basis of the span of a set of real columns, computed by
/// one-sided Jacobi on the column-normalized matrix.
///
/// For `C = Z Zᵀ` and `b = Z u`, `bᵀC⁺b = ‖Π u‖²` with `Π` the projector onto
/// the span of the rows of `Z`; working with `Z` directly halves the
/// exponent of the condition number compared with forming `C`.
#[derive(Clone, Debug)]
pub struct ColumnSpan {
    basis: Vec<Vec<f64>>,
    /// Range basis of the unscaled columns; `coeffs[r]` expresses
    /// `raw_basis[r]` in the original columns.
    raw_basis: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    ncol: usize,
}

/// One-sided Jacobi: orthogonalizes `work` in place, returning the
/// accumulated rotation (`v[j][r]`: weight of input column `j` in output `r`).
fn jacobi_columns(work: &mut [Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let ncol = work.len();
    let len = work.first().map_or(0, |c| c.len());
    let mut v: Vec<Vec<f64>> = (0..ncol)
        .map(|j| (0..ncol).map(|k| if j == k { 1.0 } else { 0.0 }).collect())
        .collect();
    // Columns whose energy falls this far below the largest are numerical
    // noise; rotating them against each other need not converge.
    let floor = 1e-30 * work.iter().map(|c| dot(c, c)).fold(0.0f64, f64::max);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..ncol {
            for q in p + 1..ncol {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if alpha <= floor || beta <= floor || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..len {
                    let (x, y) = (work[p][k], work[q][k]);
                    work[p][k] = c * x - s * y;
                    work[q][k] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            return Ok(v);
        }
    }
    if ncol <= 1 {
        return Ok(v);
    }
    Err(Error::EigNoConverge { sweeps: MAX_SWEEPS })
}

impl ColumnSpan {
    pub fn new(columns: &[Vec<f64>], rcond: f64) -> Result<Self> {
        let len = columns.first().map_or(0, |c| c.len());
        // The span is decided on unit columns so that tiny but genuine
        // directions survive; coefficients come from the unscaled columns so
        // that they are minimum-norm in the caller's units.
        let mut unit: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| {
                let s = norm(c);
                if s > 0.0 {
                    c.iter().map(|x| x / s).collect()
                } else {
                    vec![0.0; len]
                }
            })
            .collect();
        jacobi_columns(&mut unit)?;
        let basis = kept(&unit, rcond)
            .into_iter()
            .map(|(r, sv)| unit[r].iter().map(|x| x / sv).collect())
            .collect();

        let mut raw = columns.to_vec();
        let v = jacobi_columns(&mut raw)?;
        let mut raw_basis = Vec::new();
        let mut coeffs = Vec::new();
        for (r, sv) in kept(&raw, rcond) {
            raw_basis.push(raw[r].iter().map(|x| x / sv).collect());
            coeffs.push(v.iter().map(|row| row[r] / sv).collect());
        }
        Ok(Self {
            basis,
            raw_basis,
            coeffs,
            ncol: columns.len(),
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// `‖Π u‖²`.
    pub fn projected_norm_sqr(&self, u: &[f64]) -> f64 {
        self.basis.iter().map(|q| dot(q, u).powi(2)).sum()
    }

    /// `u − Π u`.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        project_out(&self.basis, u)
    }

    /// Minimum-norm least-squares coefficients: `Σ_j a_j column_j ≈ Π u`.
    pub fn least_squares(&self, u: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.ncol];
        for (q, c) in self.raw_basis.iter().zip(&self.coeffs) {
            let d = dot(q, u);
            a.iter_mut().zip(c).for_each(|(ai, ci)| *ai += d * ci);
        }
        a
    }
}

/// Indices and norms of the orthogonalized columns above `rcond` of the largest.
fn kept(cols: &[Vec<f64>], rcond: f64) -> Vec<(usize, f64)> {
    let sv: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    sv.into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0 && s > rcond * smax)
        .collect()
}

// ---------------------------------------------------------------------------
// Small vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn diagonal_eigenpairs_are_sorted() {
        let e = eig_sym(&SymMatrix::from_diag(&[2.0, 0.0])).unwrap();
        assert_eq!(e.values, vec![0.0, 2.0]);
        assert_eq!(e.vectors, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn identity_eigenvalues() {
        let e = eig_sym(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0; 3]);
    }

    #[test]
    fn pauli_x_eigenvectors_follow_sign_convention() {
        let m = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = eig_sym(&m).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(e.values[0], -1.0, 1e-14) && close(e.values[1], 1.0, 1e-14));
        assert!(close(e.vectors[0][0], h, 1e-14) && close(e.vectors[0][1], -h, 1e-14));
        assert!(close(e.vectors[1][0], h, 1e-14) && close(e.vectors[1][1], h, 1e-14));
    }

    #[test]
    fn hermitian_examples() {
        let sy = HermMatrix::from_rows(&[vec![c(0., 0.), c(0., -1.)], vec![c(0., 1.), c(0., 0.)]])
            .unwrap();
        let e = eig_herm(&sy).unwrap();
        assert!(close(e.values[0], -1.0, 1e-14) && close(e.values[1], 1.0, 1e-14));

        let e = eig_herm(&HermMatrix::from_real_diag(&[0.75, 0.25])).unwrap();
        assert_eq!(e.values, vec![0.25, 0.75]);

        let rho =
            HermMatrix::from_rows(&[vec![c(0.5, 0.), c(0.25, 0.)], vec![c(0.25, 0.), c(0.5, 0.)]])
                .unwrap();
        let e = eig_herm(&rho).unwrap();
        assert!(close(e.values[0], 0.25, 1e-14) && close(e.values[1], 0.75, 1e-14));
    }

    #[test]
    fn hermitian_reconstruction_with_complex_entries() {
        let m = HermMatrix::from_rows(&[
            vec![c(1.0, 0.), c(0.3, 0.4), c(-0.2, 0.1)],
            vec![c(0.3, -0.4), c(-0.5, 0.), c(0.0, 0.7)],
            vec![c(-0.2, -0.1), c(0.0, -0.7), c(2.0, 0.)],
        ])
        .unwrap();
        let e = eig_herm(&m).unwrap();
        let n = 3;
        let rec = HermMatrix::from_fn(n, |j, k| {
            (0..n)
                .map(|a| e.vectors[a][j] * e.vectors[a][k].conj() * e.values[a])
                .sum()
        });
        assert!(rec.sub(&m).frobenius_norm() < 1e-12);
        for a in 0..n {
            for b in 0..n {
                let ip: Complex64 = (0..n)
                    .map(|j| e.vectors[a][j].conj() * e.vectors[b][j])
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_examples() {
        assert_eq!(
            pinv(&SymMatrix::from_diag(&[2.0, 0.0]), 1e-12).unwrap(),
            SymMatrix::from_diag(&[0.5, 0.0])
        );
        let i = pinv(&SymMatrix::identity(3), 1e-12).unwrap();
        assert!(i.scaled(-1.0).frobenius_norm() > 0.0);
        let mut d = i.clone();
        d.add_scaled(-1.0, &SymMatrix::identity(3));
        assert!(d.frobenius_norm() < 1e-14);
        let p = pinv(&SymMatrix::outer(&[1.0, 1.0]), 1e-12).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!(close(p.get(j, k), 0.25, 1e-14));
            }
        }
    }

    #[test]
    fn in_range_examples() {
        let m = SymMatrix::from_diag(&[2.0, 0.0]);
        assert!(in_range(&m, &[1.0, 0.0], 1e-8).unwrap());
        assert!(!in_range(&m, &[0.0, 1.0], 1e-8).unwrap());
        assert!(in_range(&SymMatrix::zeros(2), &[0.0, 0.0], 1e-8).unwrap());
    }

    #[test]
    fn rayleigh_examples() {
        let m = SymMatrix::from_diag(&[2.0, 0.0]);
        match rayleigh_max(&[1.0, 0.0], &m).unwrap() {
            RayleighResult::Finite { value, argvec } => {
                assert!(close(value, 0.5, 1e-14));
                assert!(close(argvec[0], 0.5, 1e-14) && argvec[1].abs() < 1e-14);
            }
            r => panic!("{r:?}"),
        }
        assert_eq!(
            rayleigh_max(&[0.0, 1.0], &m).unwrap(),
            RayleighResult::Unbounded
        );
        match rayleigh_max(&[1.0, 1.0], &SymMatrix::identity(2)).unwrap() {
            RayleighResult::Finite { value, argvec } => {
                assert!(close(value, 2.0, 1e-14));
                assert!(close(argvec[0], 1.0, 1e-14) && close(argvec[1], 1.0, 1e-14));
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn rayleigh_rejects_indefinite() {
        let m = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(
            rayleigh_max(&[1.0, 0.0], &m),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn rayleigh_survives_extreme_scaling() {
        // diag(1, 1e-20) with an off-diagonal coupling keeps full rank once
        // equilibrated; a plain relative cutoff would discard the small axis.
        let m = SymMatrix::from_rows(&[vec![1.0, 0.5e-10], vec![0.5e-10, 1e-20]]).unwrap();
        let mu = [1.0, 1e-10];
        let exact = {
            // 2×2 inverse written out: K = [[1, .5],[.5, 1]], y = (1, 1).
            let y = [1.0, 1.0];
            let det = 1.0 - 0.25;
            (y[0] * y[0] - y[0] * y[1] + y[1] * y[1]) / det
        };
        let v = rayleigh_max(&mu, &m).unwrap().value().unwrap();
        assert!(close(v, exact, 1e-12), "{v} vs {exact}");
    }

    #[test]
    fn column_span_projection_matches_rayleigh() {
        let z = vec![
            vec![1.0, 2.0, 0.5, -1.0],
            vec![0.0, 1.0, 1.0, 2.0],
            vec![1.0, 3.0, 1.5, 1.0],
        ];
        let u = [0.3, -0.2, 0.7, 0.1];
        let n = z.len();
        let cm = SymMatrix::from_upper(n, |j, k| dot(&z[j], &z[k]));
        let b: Vec<f64> = z.iter().map(|r| dot(r, &u)).collect();
        let span = ColumnSpan::new(&z, 1e-10).unwrap();
        assert_eq!(span.rank(), 2);
        let direct = rayleigh_max(&b, &cm).unwrap().value().unwrap();
        assert!(close(span.projected_norm_sqr(&u), direct, 1e-12));
        let a = span.least_squares(&u);
        let fitted: Vec<f64> = (0..4)
            .map(|x| (0..n).map(|j| a[j] * z[j][x]).sum())
            .collect();
        let res = span.residual(&u);
        for x in 0..4 {
            assert!((fitted[x] + res[x] - u[x]).abs() < 1e-12);
        }
    }
}
