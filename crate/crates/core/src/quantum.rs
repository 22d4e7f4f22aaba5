//! Quantum state families, the generalized SLD map, quantum information
//! matrices, the compatibility condition and the optimal measurement.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classical::{
    self, check_weights, BoundReport, DiscreteModel, ScoreSystem, TestFunctions,
};
use crate::error::{Error, Result};
use crate::linalg::{
    self, eig_herm, CMatrix, ColumnSpan, HermMatrix, RayleighResult, SymMatrix, Tolerances,
};

const STATE_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-12;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `(σx, σy, σz)`.
pub fn pauli() -> (HermMatrix, HermMatrix, HermMatrix) {
    let z = c(0.0, 0.0);
    let x = HermMatrix::from_rows(&[vec![z, c(1.0, 0.0)], vec![c(1.0, 0.0), z]]).expect("2x2");
    let y = HermMatrix::from_rows(&[vec![z, c(0.0, -1.0)], vec![c(0.0, 1.0), z]]).expect("2x2");
    let zz = HermMatrix::from_real_diag(&[1.0, -1.0]);
    (x, y, zz)
}

/// Density matrices `ρ(θ_i)` with their derivatives on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFamily {
    dim: usize,
    params: Vec<f64>,
    weights: Vec<f64>,
    states: Vec<HermMatrix>,
    dstates: Vec<HermMatrix>,
}

impl StateFamily {
    pub fn new(
        params: Vec<f64>,
        weights: Vec<f64>,
        states: Vec<HermMatrix>,
        dstates: Vec<HermMatrix>,
    ) -> Result<Self> {
        let n = params.len();
        if n == 0 || states.len() != n || dstates.len() != n {
            return Err(Error::validation(
                "one state and one derivative per grid point",
            ));
        }
        if (1..n).any(|i| !(params[i] > params[i - 1])) {
            return Err(Error::validation("params must be strictly increasing"));
        }
        check_weights(&weights, n)?;
        let dim = states[0].dim();
        if states.iter().chain(&dstates).any(|m| m.dim() != dim) {
            return Err(Error::validation(
                "all matrices must share the Hilbert dimension",
            ));
        }
        for (i, rho) in states.iter().enumerate() {
            check_state(rho, TRACE_TOL).map_err(|e| Error::NotAState(format!("state {i}: {e}")))?;
        }
        for (i, d) in dstates.iter().enumerate() {
            if d.trace().abs() > STATE_TOL {
                return Err(Error::validation(format!(
                    "derivative {i} has trace {}, expected 0",
                    d.trace()
                )));
            }
        }
        Ok(Self {
            dim,
            params,
            weights,
            states,
            dstates,
        })
    }

    /// `ρ(θ) = (I + d cosθ σx + d sinθ σy)/2`.
    pub fn planar_qubit(d: f64, params: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::validation(format!("d = {d} must lie in (0, 1]")));
        }
        let states = params.iter().map(|&t| planar_qubit_state(d, t)).collect();
        let dstates = params
            .iter()
            .map(|&t| planar_qubit_derivative(d, t))
            .collect();
        Self::new(params, weights, states, dstates)
    }

    /// Tabulates a state generator; derivatives by central differences with
    /// step `1e-5·(1+|θ|)`.
    pub fn from_generator(
        params: Vec<f64>,
        weights: Vec<f64>,
        gen: impl Fn(f64) -> HermMatrix,
    ) -> Result<Self> {
        let states = params.iter().map(|&t| gen(t)).collect();
        let dstates = params
            .iter()
            .map(|&t| {
                let h = 1e-5 * (1.0 + t.abs());
                gen(t + h).sub(&gen(t - h)).scale(0.5 / h)
            })
            .collect();
        Self::new(params, weights, states, dstates)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn state(&self, i: usize) -> &HermMatrix {
        &self.states[i]
    }

    pub fn dstate(&self, i: usize) -> &HermMatrix {
        &self.dstates[i]
    }

    /// Every state and derivative replaced by `U X U†`.
    pub fn conjugate_by(&self, u: &CMatrix) -> Self {
        Self {
            dim: self.dim,
            params: self.params.clone(),
            weights: self.weights.clone(),
            states: self.states.iter().map(|s| s.conjugate_by(u)).collect(),
            dstates: self.dstates.iter().map(|s| s.conjugate_by(u)).collect(),
        }
    }
}

pub fn planar_qubit_state(d: f64, theta: f64) -> HermMatrix {
    let (sx, sy, _) = pauli();
    HermMatrix::identity(2)
        .add(&sx.scale(d * theta.cos()))
        .add(&sy.scale(d * theta.sin()))
        .scale(0.5)
}

pub fn planar_qubit_derivative(d: f64, theta: f64) -> HermMatrix {
    let (sx, sy, _) = pauli();
    sx.scale(-d * theta.sin())
        .add(&sy.scale(d * theta.cos()))
        .scale(0.5)
}

fn check_state(rho: &HermMatrix, trace_tol: f64) -> std::result::Result<(), String> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > trace_tol {
        return Err(format!("trace {tr} differs from 1"));
    }
    let e = eig_herm(rho).map_err(|e| e.to_string())?;
    if e.values[0] < -STATE_TOL {
        return Err(format!("minimum eigenvalue {} is negative", e.values[0]));
    }
    Ok(())
}

/// Operator score directions `G_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOperators {
    ops: Vec<HermMatrix>,
}

impl ScoreOperators {
    pub fn new(ops: Vec<HermMatrix>) -> Self {
        Self { ops }
    }

    /// `G_j = ∂_θρ(θ_j)`.
    pub fn local(family: &StateFamily) -> Self {
        Self {
            ops: family.dstates.clone(),
        }
    }

    pub fn ops(&self) -> &[HermMatrix] {
        &self.ops
    }

    pub fn conjugate_by(&self, u: &CMatrix) -> Self {
        Self {
            ops: self.ops.iter().map(|g| g.conjugate_by(u)).collect(),
        }
    }

    fn check(&self, family: &StateFamily) -> Result<()> {
        if self.ops.len() != family.n() || self.ops.iter().any(|g| g.dim() != family.dim) {
            return Err(Error::validation(
                "one score operator of the family dimension per grid point",
            ));
        }
        Ok(())
    }
}

/// Positive operators summing to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    elements: Vec<HermMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<HermMatrix>) -> Result<Self> {
        let dim = elements
            .first()
            .map(|e| e.dim())
            .ok_or_else(|| Error::validation("empty POVM"))?;
        if elements.iter().any(|e| e.dim() != dim) {
            return Err(Error::validation("POVM elements must share a dimension"));
        }
        let mut sum = HermMatrix::zeros(dim);
        for (x, e) in elements.iter().enumerate() {
            let min = eig_herm(e)?.values[0];
            if min < -STATE_TOL {
                return Err(Error::validation(format!(
                    "POVM element {x} has eigenvalue {min}"
                )));
            }
            sum = sum.add(e);
        }
        let dev = sum.sub(&HermMatrix::identity(dim)).frobenius_norm();
        if dev > STATE_TOL {
            return Err(Error::validation(format!(
                "POVM elements sum to I only within {dev:.3e}"
            )));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[HermMatrix] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn conjugate_by(&self, u: &CMatrix) -> Self {
        Self {
            elements: self.elements.iter().map(|e| e.conjugate_by(u)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Generalized SLD
// ---------------------------------------------------------------------------

/// `Ω_ρ` in the eigenbasis of `ρ`: entry weights `2/(p_a + p_b)`.
struct OmegaMap {
    basis: CMatrix,
    weight: Vec<f64>,
    dim: usize,
}

impl OmegaMap {
    fn new(rho: &HermMatrix, reg: f64) -> Result<Self> {
        check_state(rho, STATE_TOL).map_err(Error::NotAState)?;
        if !(reg >= 0.0) {
            return Err(Error::NotAState(format!(
                "regularization {reg} must be non-negative"
            )));
        }
        let e = eig_herm(rho)?;
        let dim = rho.dim();
        let pmax = e.values.iter().fold(0.0f64, |m, v| m.max(*v));
        let rank_tol = 1e-12 * pmax;
        let mut weight = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                let s = e.values[a] + e.values[b];
                weight[a * dim + b] = if reg > 0.0 {
                    2.0 / (s + 2.0 * reg)
                } else if s > rank_tol {
                    2.0 / s
                } else {
                    0.0
                };
            }
        }
        Ok(Self {
            basis: CMatrix::from_columns(&e.vectors),
            weight,
            dim,
        })
    }

    fn to_eigenbasis(&self, x: &HermMatrix) -> CMatrix {
        self.basis.adjoint().mul(x.as_cmatrix()).mul(&self.basis)
    }

    fn apply(&self, x: &HermMatrix) -> HermMatrix {
        let xt = self.to_eigenbasis(x);
        let n = self.dim;
        let ot = CMatrix::from_fn(n, |a, b| xt.get(a, b) * self.weight[a * n + b]);
        self.basis
            .mul(&ot)
            .mul(&self.basis.adjoint())
            .hermitian_part()
    }
}

/// Hermitian solution of `½{ρ, Ω} = X` on the support of `ρ`, or of
/// `½{ρ + reg·I, Ω} = X` when `reg > 0`.
pub fn omega(rho: &HermMatrix, x: &HermMatrix, reg: f64) -> Result<HermMatrix> {
    Ok(OmegaMap::new(rho, reg)?.apply(x))
}

/// `‖½{ρ, Ω} − (X − Π⊥ X Π⊥)‖_F` with `Π⊥` the kernel projector of `ρ`.
pub fn omega_residual(rho: &HermMatrix, x: &HermMatrix, om: &HermMatrix) -> Result<f64> {
    let e = eig_herm(rho)?;
    let pmax = e.values.iter().fold(0.0f64, |m, v| m.max(*v));
    let n = rho.dim();
    let kernel: Vec<usize> = (0..n)
        .filter(|&a| 2.0 * e.values[a] <= 1e-12 * pmax)
        .collect();
    let perp = HermMatrix::from_fn(n, |j, k| {
        kernel
            .iter()
            .map(|&a| e.vectors[a][j] * e.vectors[a][k].conj())
            .sum()
    });
    let anti = rho.mul(om).add(&om.mul(rho)).scale(c(0.5, 0.0));
    let target = x.as_cmatrix().sub(&perp.mul(x).mul(perp.as_cmatrix()));
    Ok(anti.sub(&target).frobenius_norm())
}

/// `Q^(i)_jk = Tr[G_j Ω_{ρ_i}(G_k)]`.
pub fn q_info_matrix(family: &StateFamily, scores: &ScoreOperators, i: usize) -> Result<SymMatrix> {
    scores.check(family)?;
    let map = OmegaMap::new(&family.states[i], 0.0)?;
    let n = scores.ops.len();
    let dim = family.dim;
    let rotated: Vec<CMatrix> = scores.ops.iter().map(|g| map.to_eigenbasis(g)).collect();
    let mut entries = vec![vec![c(0.0, 0.0); n]; n];
    for j in 0..n {
        for k in 0..n {
            let mut acc = c(0.0, 0.0);
            for a in 0..dim {
                for b in 0..dim {
                    acc += rotated[j].get(b, a) * rotated[k].get(a, b) * map.weight[a * dim + b];
                }
            }
            entries[j][k] = acc;
        }
    }
    let scale = entries
        .iter()
        .flatten()
        .fold(0.0f64, |m, z| m.max(z.norm()));
    let imag = entries
        .iter()
        .flatten()
        .fold(0.0f64, |m, z| m.max(z.im.abs()));
    if imag > 1e-10 * (1.0 + scale) {
        return Err(Error::NonRealInformation(imag));
    }
    Ok(SymMatrix::from_upper(n, |j, k| {
        0.5 * (entries[j][k].re + entries[k][j].re)
    }))
}

/// Bias constraints for the quantum bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BiasSpec {
    Common(Vec<f64>),
    PerPoint(Vec<Vec<f64>>),
}

impl BiasSpec {
    fn per_point(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let out = match self {
            BiasSpec::Common(b) => vec![b.clone(); n],
            BiasSpec::PerPoint(bs) => bs.clone(),
        };
        if out.len() != n || out.iter().any(|b| b.len() != n) {
            return Err(Error::validation(format!(
                "bias must provide {n} vectors of length {n}"
            )));
        }
        Ok(out)
    }

    /// The single bias vector, if every point shares it.
    pub fn common(&self) -> Option<&[f64]> {
        match self {
            BiasSpec::Common(b) => Some(b),
            BiasSpec::PerPoint(bs) => bs
                .first()
                .filter(|b0| bs.iter().all(|b| b == *b0))
                .map(|b| b.as_slice()),
        }
    }
}

pub fn q_score_system(
    family: &StateFamily,
    scores: &ScoreOperators,
    bias: &BiasSpec,
) -> Result<ScoreSystem> {
    let n = family.n();
    let info = (0..n)
        .map(|i| q_info_matrix(family, scores, i))
        .collect::<Result<Vec<_>>>()?;
    ScoreSystem::new(family.weights.clone(), info, bias.per_point(n)?)
}

pub fn q_bounds(
    family: &StateFamily,
    scores: &ScoreOperators,
    bias: &BiasSpec,
) -> Result<BoundReport> {
    q_score_system(family, scores, bias)?.report()
}

/// `T_jk = Tr(G_j G_k)`.
pub fn score_gram(scores: &ScoreOperators) -> SymMatrix {
    let g = &scores.ops;
    SymMatrix::from_upper(g.len(), |j, k| g[j].trace_product(&g[k]).re)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    pub holds: bool,
    /// `residuals[i][j]`: norm of `Ω_{ρ_i}(G_j)` outside `span{G} ⊕ ℝI`
    /// (zero for inactive points).
    pub residuals: Vec<Vec<f64>>,
    /// Largest residual relative to `‖Ω_{ρ_i}(G_j)‖_F`.
    pub max_relative: f64,
}

impl CompatReport {
    pub fn table(&self) -> String {
        let mut s = String::from("i,j,residual\n");
        for (i, row) in self.residuals.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                s.push_str(&format!("{i},{j},{r:.6e}\n"));
            }
        }
        s
    }
}

pub fn compat_check(
    family: &StateFamily,
    scores: &ScoreOperators,
    tol: f64,
) -> Result<CompatReport> {
    scores.check(family)?;
    let n = family.n();
    let mut span_vecs: Vec<Vec<f64>> = scores.ops.iter().map(|g| g.to_real_vec()).collect();
    span_vecs.push(HermMatrix::identity(family.dim).to_real_vec());
    let span = ColumnSpan::new(&span_vecs, Tolerances::default().span_rcond)?;
    let mut residuals = vec![vec![0.0; n]; n];
    let mut max_relative = 0.0f64;
    let mut holds = true;
    for i in (0..n).filter(|&i| family.weights[i] > 0.0) {
        let map = OmegaMap::new(&family.states[i], 0.0)?;
        for j in 0..n {
            let om = map.apply(&scores.ops[j]);
            let r = linalg::norm(&span.residual(&om.to_real_vec()));
            let size = om.frobenius_norm();
            residuals[i][j] = r;
            if r > tol * size {
                holds = false;
            }
            if size > 0.0 {
                max_relative = max_relative.max(r / size);
            }
        }
    }
    Ok(CompatReport {
        holds,
        residuals,
        max_relative,
    })
}

#[derive(Clone, Debug)]
pub struct OptimalPovm {
    pub povm: Povm,
    /// Eigenvalue of `M_FG` for each element.
    pub eigenvalues: Vec<f64>,
    pub m_fg: HermMatrix,
    /// `T⁺b`.
    pub coefficients: Vec<f64>,
}

/// Eigenprojectors of `M_FG = Σ_j (T⁺b)_j G_j`.
pub fn optimal_povm(
    family: &StateFamily,
    scores: &ScoreOperators,
    bias: &BiasSpec,
) -> Result<OptimalPovm> {
    let b = bias
        .common()
        .ok_or_else(|| {
            Error::validation(
                "the optimal measurement needs one bias vector shared by every grid point",
            )
        })?
        .to_vec();
    if b.len() != family.n() {
        return Err(Error::validation(format!(
            "bias has {} entries, expected {}",
            b.len(),
            family.n()
        )));
    }
    let compat = compat_check(family, scores, 1e-8)?;
    if !compat.holds {
        return Err(Error::IncompatibleFamily {
            max_residual: compat.max_relative,
            table: compat.table(),
        });
    }
    if b.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateBias(
            "b = 0 gives M_FG = 0; every measurement is optimal".into(),
        ));
    }
    let t = score_gram(scores);
    let coefficients = match linalg::rayleigh_max(&b, &t)? {
        RayleighResult::Finite { argvec, .. } => argvec,
        RayleighResult::Unbounded => return Err(Error::BiasOutOfRange),
    };
    let dim = family.dim;
    let mut m_fg = HermMatrix::zeros(dim);
    for (cj, g) in coefficients.iter().zip(&scores.ops) {
        m_fg = m_fg.add(&g.scale(*cj));
    }
    let norm = m_fg.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::DegenerateBias("M_FG vanishes".into()));
    }
    let e = eig_herm(&m_fg)?;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for a in 0..dim {
        match clusters.last_mut() {
            Some(cl) if e.values[a] - e.values[*cl.last().expect("non-empty")] <= 1e-9 * norm => {
                cl.push(a)
            }
            _ => clusters.push(vec![a]),
        }
    }
    let mut elements = Vec::with_capacity(clusters.len());
    let mut eigenvalues = Vec::with_capacity(clusters.len());
    for cl in &clusters {
        elements.push(HermMatrix::from_fn(dim, |j, k| {
            cl.iter()
                .map(|&a| e.vectors[a][j] * e.vectors[a][k].conj())
                .sum()
        }));
        eigenvalues.push(cl.iter().map(|&a| e.values[a]).sum::<f64>() / cl.len() as f64);
    }
    Ok(OptimalPovm {
        povm: Povm::new(elements)?,
        eigenvalues,
        m_fg,
        coefficients,
    })
}

/// Classical model generated by measuring the family with `povm`, and the
/// test functions `g_k(x) = Tr(E_x G_k)`.
pub fn induced_model(
    family: &StateFamily,
    povm: &Povm,
    scores: &ScoreOperators,
) -> Result<(DiscreteModel, TestFunctions)> {
    scores.check(family)?;
    let n = family.n();
    let mut probs = vec![Vec::with_capacity(povm.len()); n];
    let mut derivs = vec![Vec::with_capacity(povm.len()); n];
    for (x, e) in povm.elements.iter().enumerate() {
        for i in 0..n {
            let p = e.trace_product(&family.states[i]).re;
            if p <= 1e-14 {
                return Err(Error::ZeroProbabilityOutcome {
                    outcome: x,
                    index: i,
                    value: p,
                });
            }
            probs[i].push(p);
            derivs[i].push(e.trace_product(&family.dstates[i]).re);
        }
    }
    let g = scores
        .ops
        .iter()
        .map(|gk| {
            povm.elements
                .iter()
                .map(|e| e.trace_product(gk).re)
                .collect()
        })
        .collect();
    let outcomes = (0..povm.len()).map(|x| format!("E{x}")).collect();
    let model = DiscreteModel::new(
        outcomes,
        family.params.clone(),
        probs,
        derivs,
        family.weights.clone(),
    )?;
    Ok((model, TestFunctions::new(g)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCheck {
    pub holds: bool,
    /// Largest `‖[E_x, L_i]‖_F`.
    pub commutator_residual: f64,
    /// Largest `‖√E_x√ρ_i − α √E_x L_i √ρ_i‖_F` at the best real `α`.
    pub proportionality_residual: f64,
    /// Identity component `Tr(L_i)/dim` of each `L_i` (zero for inactive points).
    pub shifts: Vec<f64>,
    pub induced_fg: f64,
    pub quantum_fg: f64,
}

/// Square root on a PSD spectrum of unit scale. Eigenvalues at roundoff
/// level are zeroed so that `√1e-16` does not leak in as `1e-8`.
fn psd_sqrt(v: f64) -> f64 {
    if v > 1e-13 {
        v.sqrt()
    } else {
        0.0
    }
}

/// Checks that `povm` saturates the fully global quantum bound for `bias`.
pub fn verify_quantum_optimality(
    family: &StateFamily,
    scores: &ScoreOperators,
    povm: &Povm,
    bias: &BiasSpec,
) -> Result<OptimalityCheck> {
    let n = family.n();
    let dim = family.dim;
    let qsys = q_score_system(family, scores, bias)?;
    let quantum_fg = qsys.fg()?;
    let a = qsys.saturating_a()?;
    let sqrt_e = povm
        .elements
        .iter()
        .map(|e| e.map_eigen(psd_sqrt))
        .collect::<Result<Vec<_>>>()?;
    let mut commutator_residual = 0.0f64;
    let mut proportionality_residual = 0.0f64;
    let mut shifts = vec![0.0; n];
    for i in (0..n).filter(|&i| family.weights[i] > 0.0) {
        let mut ga = HermMatrix::zeros(dim);
        for (aj, g) in a.column(i).iter().zip(&scores.ops) {
            ga = ga.add(&g.scale(*aj));
        }
        let l = omega(&family.states[i], &ga, 0.0)?;
        shifts[i] = l.trace() / dim as f64;
        let sqrt_rho = family.states[i].map_eigen(psd_sqrt)?;
        let lsr = l.mul(&sqrt_rho);
        for (e, se) in povm.elements.iter().zip(&sqrt_e) {
            commutator_residual = commutator_residual.max(e.commutator_norm(&l));
            let lhs = se.mul(&sqrt_rho);
            let rhs = se.as_cmatrix().mul(&lsr);
            let rn = rhs.frobenius_norm();
            if rn <= 1e-12 * (1.0 + lhs.frobenius_norm()) {
                continue;
            }
            let ip: Complex64 = (0..dim)
                .flat_map(|j| (0..dim).map(move |k| (j, k)))
                .map(|(j, k)| rhs.get(j, k).conj() * lhs.get(j, k))
                .sum();
            let alpha = ip.re / (rn * rn);
            let r = lhs.sub(&rhs.scale(c(alpha, 0.0))).frobenius_norm();
            proportionality_residual = proportionality_residual.max(r);
        }
    }
    let (model, g) = induced_model(family, povm, scores)?;
    let info = (0..n)
        .map(|i| classical::info_matrix(&model, &g, i))
        .collect::<Result<Vec<_>>>()?;
    let csys = ScoreSystem::new(family.weights.clone(), info, bias.per_point(n)?)?;
    let induced_fg = csys.fg()?;
    let tol = 1e-8;
    let holds = commutator_residual <= tol
        && proportionality_residual <= tol
        && (induced_fg - quantum_fg).abs() <= tol * quantum_fg.abs().max(1e-300);
    Ok(OptimalityCheck {
        holds,
        commutator_residual,
        proportionality_residual,
        shifts,
        induced_fg,
        quantum_fg,
    })
}
