//! Finite-outcome models, global score functions and the classical bound
//! hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm, ColumnSpan, RayleighResult, SymMatrix, Tolerances};

const SUM_TOL: f64 = 1e-12;
const DERIV_SUM_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Probability table `p(x|θ_i)` on a finite grid with its θ-derivative and
/// the risk weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    outcomes: Vec<String>,
    params: Vec<f64>,
    probs: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteModel {
    pub fn new(
        outcomes: Vec<String>,
        params: Vec<f64>,
        probs: Vec<Vec<f64>>,
        derivs: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            outcomes,
            params,
            probs,
            derivs,
            weights,
        };
        model.validate()?;
        Ok(model)
    }

    /// Skips validation; for tables that are valid by construction (products).
    pub(crate) fn new_unchecked(
        outcomes: Vec<String>,
        params: Vec<f64>,
        probs: Vec<Vec<f64>>,
        derivs: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Self {
        Self {
            outcomes,
            params,
            probs,
            derivs,
            weights,
        }
    }

    /// Tabulates `prob(θ)` on the grid; derivatives by central differences
    /// with step `1e-5·(1+|θ|)`.
    pub fn from_fn(
        outcomes: Vec<String>,
        params: Vec<f64>,
        weights: Vec<f64>,
        prob: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let probs = params.iter().map(|&t| prob(t)).collect();
        let derivs = params
            .iter()
            .map(|&t| {
                let h = 1e-5 * (1.0 + t.abs());
                let (up, dn) = (prob(t + h), prob(t - h));
                up.iter()
                    .zip(&dn)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect()
            })
            .collect();
        Self::new(outcomes, params, probs, derivs, weights)
    }

    fn validate(&self) -> Result<()> {
        let n = self.params.len();
        let nx = self.outcomes.len();
        if n == 0 || nx == 0 {
            return Err(Error::validation(
                "model needs at least one parameter value and one outcome",
            ));
        }
        if let Some(i) = (1..n).find(|&i| !(self.params[i] > self.params[i - 1])) {
            return Err(Error::validation(format!(
                "params must be strictly increasing (index {i})"
            )));
        }
        if self.params.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("params must be finite"));
        }
        for (name, table) in [("probs", &self.probs), ("derivs", &self.derivs)] {
            if table.len() != n {
                return Err(Error::validation(format!(
                    "{name} has {} rows, expected {n}",
                    table.len()
                )));
            }
            for (i, row) in table.iter().enumerate() {
                if row.len() != nx {
                    return Err(Error::validation(format!(
                        "{name} row {i} has {} entries, expected {nx}",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "{name} row {i} has a non-finite entry"
                    )));
                }
            }
        }
        for (i, row) in self.probs.iter().enumerate() {
            if let Some(x) = row.iter().position(|&p| p <= 0.0) {
                return Err(Error::validation(format!(
                    "probs row {i} (theta = {}): entry {x} = {} is not strictly positive",
                    self.params[i], row[x]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::validation(format!(
                    "probs row {i} (theta = {}) sums to {s}, expected 1",
                    self.params[i]
                )));
            }
        }
        for (i, row) in self.derivs.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if s.abs() > DERIV_SUM_TOL {
                return Err(Error::validation(format!(
                    "derivs row {i} sums to {s}, expected 0"
                )));
            }
        }
        check_weights(&self.weights, n)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i]
    }

    pub fn derivs(&self, i: usize) -> &[f64] {
        &self.derivs[i]
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, self.n_params())?;
        self.weights = weights;
        Ok(self)
    }

    /// `E_{θ_i}[θ̂]`.
    pub fn mean(&self, est: &Estimator, i: usize) -> f64 {
        dot(&self.probs[i], &est.values)
    }
}

pub(crate) fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::validation(format!(
            "weights has {} entries, expected {n}",
            w.len()
        )));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::validation("weights must be finite and non-negative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::validation(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Test functions `g_j(x)`, one row per grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctions {
    rows: Vec<Vec<f64>>,
}

impl TestFunctions {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::validation(
                "test-function rows must have equal length",
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("test functions must be finite"));
        }
        Ok(Self { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `g(x)` as a vector over j.
    pub fn at(&self, x: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[x]).collect()
    }

    fn check(&self, model: &DiscreteModel) -> Result<()> {
        if self.n() != model.n_params() || self.rows.iter().any(|r| r.len() != model.n_outcomes()) {
            return Err(Error::validation(format!(
                "test functions are {}×{}, model needs {}×{}",
                self.n(),
                self.rows.first().map_or(0, |r| r.len()),
                model.n_params(),
                model.n_outcomes()
            )));
        }
        Ok(())
    }
}

/// Estimator values `θ̂(x)` indexed like the model outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    values: Vec<f64>,
}

impl Estimator {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(c: f64, n_outcomes: usize) -> Self {
        Self {
            values: vec![c; n_outcomes],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with `delta` added at outcome `x`.
    pub fn perturbed(&self, x: usize, delta: f64) -> Self {
        let mut values = self.values.clone();
        values[x] += delta;
        Self { values }
    }

    fn check(&self, model: &DiscreteModel) -> Result<()> {
        if self.values.len() != model.n_outcomes() {
            return Err(Error::validation(format!(
                "estimator has {} values, model has {} outcomes",
                self.values.len(),
                model.n_outcomes()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Diagonal,
    ColumnConstant,
    General,
}

/// Hierarchy matrix stored by columns: `columns[i]` is `a_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyMatrix {
    columns: Vec<Vec<f64>>,
    shape: Shape,
}

impl HierarchyMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::validation("hierarchy matrix must be square"));
        }
        let diagonal = columns
            .iter()
            .enumerate()
            .all(|(i, c)| c.iter().enumerate().all(|(j, &v)| j == i || v == 0.0));
        let constant = columns.windows(2).all(|w| w[0] == w[1]);
        let shape = if diagonal {
            Shape::Diagonal
        } else if constant {
            Shape::ColumnConstant
        } else {
            Shape::General
        };
        Ok(Self { columns, shape })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let columns = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self {
            columns,
            shape: Shape::Diagonal,
        }
    }

    pub fn column_constant(a: &[f64]) -> Self {
        Self::from_columns(vec![a.to_vec(); a.len()]).expect("square by construction")
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.columns.iter().flatten().map(|v| v * v).sum()
    }
}

// ---------------------------------------------------------------------------
// Score systems
// ---------------------------------------------------------------------------

/// Square-root form of one grid point: `C = Σ_x z(x) z(x)ᵀ` and `b = Σ_x z(x) u(x)`,
/// with `columns[j][x] = z_j(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFactor {
    pub columns: Vec<Vec<f64>>,
    pub u: Vec<f64>,
}

/// Per-point information matrices and bias vectors with the risk weights;
/// the common input of every bound level.
#[derive(Clone, Debug)]
pub struct ScoreSystem {
    weights: Vec<f64>,
    info: Vec<SymMatrix>,
    bias: Vec<Vec<f64>>,
    factors: Option<Vec<ScoreFactor>>,
    tol: Tolerances,
}

impl ScoreSystem {
    pub fn new(weights: Vec<f64>, info: Vec<SymMatrix>, bias: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        if info.len() != n || bias.len() != n {
            return Err(Error::validation(
                "one information matrix and one bias vector per grid point",
            ));
        }
        if info.iter().any(|c| c.dim() != n) || bias.iter().any(|b| b.len() != n) {
            return Err(Error::validation(
                "information matrices and bias vectors must have the grid dimension",
            ));
        }
        Ok(Self {
            weights,
            info,
            bias,
            factors: None,
            tol: Tolerances::default(),
        })
    }

    /// Attaches square-root factors; FG and GBar then use projections
    /// instead of pseudoinverses.
    pub fn with_factors(mut self, factors: Vec<ScoreFactor>) -> Result<Self> {
        let n = self.n();
        if factors.len() != n || factors.iter().any(|f| f.columns.len() != n) {
            return Err(Error::validation(
                "one factor with n columns per grid point",
            ));
        }
        self.factors = Some(factors);
        Ok(self)
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn info(&self, i: usize) -> &SymMatrix {
        &self.info[i]
    }

    pub fn bias(&self, i: usize) -> &[f64] {
        &self.bias[i]
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.weights[i] > 0.0)
    }

    /// `(Σ w_i a_iᵀb_i)² / Σ w_i a_iᵀC_i a_i`.
    pub fn general(&self, a: &HierarchyMatrix) -> Result<f64> {
        if a.columns().len() != self.n() {
            return Err(Error::validation("hierarchy matrix dimension mismatch"));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.n() {
            let ai = a.column(i);
            num += self.weights[i] * dot(ai, &self.bias[i]);
            den += self.weights[i] * self.info[i].quad_form(ai);
        }
        if !(den > 1e-14 * a.frobenius_norm_sqr()) || den <= 0.0 {
            return Err(Error::DegenerateDenominator { value: den });
        }
        Ok(num * num / den)
    }

    /// `Σ w_i (b_i^(i))² / C^(i)_ii`; 0/0 terms vanish.
    pub fn gcr(&self) -> Result<f64> {
        let mut total = 0.0;
        for i in self.active() {
            let c = self.info[i].get(i, i);
            let b = self.bias[i][i];
            if c > 0.0 {
                total += self.weights[i] * b * b / c;
            } else {
                let scale = self.bias[i].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if b.abs() > 1e-12 * (1.0 + scale) {
                    return Err(Error::UnboundedGcr { index: i, bias: b });
                }
            }
        }
        Ok(total)
    }

    /// `b_wᵀ C_w⁺ b_w`.
    pub fn gbar(&self) -> Result<f64> {
        if let Some(factors) = &self.factors {
            let n = self.n();
            let mut columns = vec![Vec::new(); n];
            let mut u = Vec::new();
            for (i, f) in factors.iter().enumerate() {
                let sw = self.weights[i].sqrt();
                for (col, zj) in columns.iter_mut().zip(&f.columns) {
                    col.extend(zj.iter().map(|z| sw * z));
                }
                u.extend(f.u.iter().map(|v| sw * v));
            }
            return Ok(ColumnSpan::new(&columns, self.tol.span_rcond)?.projected_norm_sqr(&u));
        }
        let n = self.n();
        let mut cw = SymMatrix::zeros(n);
        let mut bw = vec![0.0; n];
        for i in 0..n {
            cw.add_scaled(self.weights[i], &self.info[i]);
            bw.iter_mut()
                .zip(&self.bias[i])
                .for_each(|(a, b)| *a += self.weights[i] * b);
        }
        if bw.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        match linalg::rayleigh_max_with(&bw, &cw, &self.tol)? {
            RayleighResult::Finite { value, .. } => Ok(value),
            RayleighResult::Unbounded => Err(Error::RangeViolation {
                context: "weighted bias b_w vs C_w".into(),
            }),
        }
    }

    /// `Σ w_i b^(i)ᵀ (C^(i))⁺ b^(i)`.
    pub fn fg(&self) -> Result<f64> {
        let mut total = 0.0;
        for i in self.active() {
            total += self.weights[i] * self.fg_term(i)?.0;
        }
        Ok(total)
    }

    /// Value of the i-th FG term and a maximizing `a_i`.
    fn fg_term(&self, i: usize) -> Result<(f64, Vec<f64>)> {
        if let Some(factors) = &self.factors {
            let f = &factors[i];
            let span = ColumnSpan::new(&f.columns, self.tol.span_rcond)?;
            return Ok((span.projected_norm_sqr(&f.u), span.least_squares(&f.u)));
        }
        if self.bias[i].iter().all(|&v| v == 0.0) {
            return Ok((0.0, vec![0.0; self.n()]));
        }
        match linalg::rayleigh_max_with(&self.bias[i], &self.info[i], &self.tol)? {
            RayleighResult::Finite { value, argvec } => Ok((value, argvec)),
            RayleighResult::Unbounded => Err(Error::RangeViolation {
                context: format!("b^({i}) vs C^({i})"),
            }),
        }
    }

    /// Maximizing hierarchy matrix with columns `(C^(i))⁺ b^(i)`.
    pub fn saturating_a(&self) -> Result<HierarchyMatrix> {
        let cols = (0..self.n())
            .map(|i| self.fg_term(i).map(|t| t.1))
            .collect::<Result<Vec<_>>>()?;
        HierarchyMatrix::from_columns(cols)
    }

    pub fn ranks(&self) -> Result<Vec<usize>> {
        match &self.factors {
            Some(fs) => fs
                .iter()
                .map(|f| Ok(ColumnSpan::new(&f.columns, self.tol.span_rcond)?.rank()))
                .collect(),
            None => self
                .info
                .iter()
                .map(|c| linalg::rank(c, self.tol.rcond))
                .collect(),
        }
    }

    pub fn report(&self) -> Result<BoundReport> {
        Ok(BoundReport {
            gcr: self.gcr()?,
            gbar: self.gbar()?,
            fg: self.fg()?,
            ranks: self.ranks()?,
            saturating_a: Some(self.saturating_a()?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gcr: f64,
    pub gbar: f64,
    pub fg: f64,
    pub ranks: Vec<usize>,
    pub saturating_a: Option<HierarchyMatrix>,
}

// ---------------------------------------------------------------------------
// Classical operations
// ---------------------------------------------------------------------------

pub fn local_scores(model: &DiscreteModel) -> TestFunctions {
    TestFunctions {
        rows: model.derivs.clone(),
    }
}

/// `C^(i)_jk = Σ_x g_j(x) g_k(x) / p(x|θ_i)`.
pub fn info_matrix(model: &DiscreteModel, g: &TestFunctions, i: usize) -> Result<SymMatrix> {
    g.check(model)?;
    let p = model.probs(i);
    if let Some(x) = p.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroProbability {
            index: i,
            outcome: x,
            value: p[x],
        });
    }
    let n = g.n();
    Ok(SymMatrix::from_upper(n, |j, k| {
        g.rows[j]
            .iter()
            .zip(&g.rows[k])
            .zip(p)
            .map(|((a, b), pp)| a * b / pp)
            .sum()
    }))
}

/// `b^(i) = Σ_x g(x) [θ̂(x) − E_{θ_i}θ̂]`.
pub fn bias_vector(
    model: &DiscreteModel,
    g: &TestFunctions,
    est: &Estimator,
    i: usize,
) -> Result<Vec<f64>> {
    g.check(model)?;
    est.check(model)?;
    let mean = model.mean(est, i);
    Ok(g.rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&est.values)
                .map(|(gj, t)| gj * (t - mean))
                .sum()
        })
        .collect())
}

/// Information matrices, biases and square-root factors of a classical model.
pub fn score_system(
    model: &DiscreteModel,
    g: &TestFunctions,
    est: &Estimator,
) -> Result<ScoreSystem> {
    let n = model.n_params();
    let mut info = Vec::with_capacity(n);
    let mut bias = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n);
    for i in 0..n {
        info.push(info_matrix(model, g, i)?);
        bias.push(bias_vector(model, g, est, i)?);
        let p = model.probs(i);
        let mean = model.mean(est, i);
        let columns = g
            .rows
            .iter()
            .map(|r| r.iter().zip(p).map(|(gj, pp)| gj / pp.sqrt()).collect())
            .collect();
        let u = est
            .values
            .iter()
            .zip(p)
            .map(|(t, pp)| pp.sqrt() * (t - mean))
            .collect();
        factors.push(ScoreFactor { columns, u });
    }
    ScoreSystem::new(model.weights.clone(), info, bias)?.with_factors(factors)
}

pub fn bound_general(
    model: &DiscreteModel,
    g: &TestFunctions,
    est: &Estimator,
    a: &HierarchyMatrix,
) -> Result<f64> {
    score_system(model, g, est)?.general(a)
}

pub fn bound_gcr(model: &DiscreteModel, g: &TestFunctions, est: &Estimator) -> Result<f64> {
    score_system(model, g, est)?.gcr()
}

pub fn bound_gbar(model: &DiscreteModel, g: &TestFunctions, est: &Estimator) -> Result<f64> {
    score_system(model, g, est)?.gbar()
}

pub fn bound_fg(model: &DiscreteModel, g: &TestFunctions, est: &Estimator) -> Result<f64> {
    score_system(model, g, est)?.fg()
}

pub fn bound_report(
    model: &DiscreteModel,
    g: &TestFunctions,
    est: &Estimator,
) -> Result<BoundReport> {
    score_system(model, g, est)?.report()
}

/// `Σ_i w_i Var_{θ_i}(θ̂)` by exact summation.
pub fn weighted_variance(model: &DiscreteModel, est: &Estimator) -> Result<f64> {
    est.check(model)?;
    Ok((0..model.n_params())
        .map(|i| {
            let mean = model.mean(est, i);
            let var: f64 = model
                .probs(i)
                .iter()
                .zip(&est.values)
                .map(|(p, t)| p * (t - mean).powi(2))
                .sum();
            model.weights[i] * var
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationCheck {
    pub holds: bool,
    pub residual: f64,
}

/// Tests `g(x)ᵀ(C^(i))⁺b^(i) = p(x|θ_i) Δ_iθ̂(x)` on every active point.
pub fn check_saturation(
    model: &DiscreteModel,
    g: &TestFunctions,
    est: &Estimator,
) -> Result<SaturationCheck> {
    let sys = score_system(model, g, est)?;
    let factors = sys
        .factors
        .as_ref()
        .expect("classical systems carry factors");
    let mut residual = 0.0f64;
    for i in sys.active() {
        let f = &factors[i];
        let span = ColumnSpan::new(&f.columns, sys.tol.span_rcond)?;
        // g(x)ᵀa − pΔθ̂ = √p · (Πu − u)_x
        let r = span.residual(&f.u);
        for (rx, p) in r.iter().zip(model.probs(i)) {
            residual = residual.max(p.sqrt() * rx.abs());
        }
    }
    let scale = est.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SaturationCheck {
        holds: residual <= 1e-8 * (1.0 + scale),
        residual,
    })
}

/// Existence of a hierarchy matrix saturating the bound for this estimator:
/// `P_i(θ̂ − 1 p_iᵀθ̂) ∈ Range(Gᵀ)` on every active point.
pub fn check_existence(model: &DiscreteModel, g: &TestFunctions, est: &Estimator) -> Result<bool> {
    g.check(model)?;
    est.check(model)?;
    let span = ColumnSpan::new(&g.rows, Tolerances::default().span_rcond)?;
    for i in (0..model.n_params()).filter(|&i| model.weights[i] > 0.0) {
        let mean = model.mean(est, i);
        let r: Vec<f64> = model
            .probs(i)
            .iter()
            .zip(&est.values)
            .map(|(p, t)| p * (t - mean))
            .collect();
        if norm(&span.residual(&r)) > 1e-8 * (1.0 + norm(&r)) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSolution {
    pub estimator: Estimator,
    pub coeffs: Vec<f64>,
    /// `max_k |E_{θ_k}θ̂ − θ_k|`.
    pub residual: f64,
}

/// Globally unbiased estimator of the form `θ̂(x) = θ_i + g(x)ᵀc / p(x|θ_i)`,
/// if one exists.
pub fn anchor_construct(
    model: &DiscreteModel,
    g: &TestFunctions,
    anchor: usize,
) -> Result<Option<AnchorSolution>> {
    g.check(model)?;
    let n = model.n_params();
    let nx = model.n_outcomes();
    let pi = model.probs(anchor);
    let theta_i = model.params[anchor];
    let delta: Vec<f64> = model.params.iter().map(|t| t - theta_i).collect();
    // Columns of M^(i): column k holds Σ_x p(x|θ_j)/p(x|θ_i) g_k(x) over j.
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|j| {
                    (0..nx)
                        .map(|x| model.probs(j)[x] / pi[x] * g.rows[k][x])
                        .sum()
                })
                .collect()
        })
        .collect();
    let span = ColumnSpan::new(&columns, Tolerances::default().span_rcond)?;
    if norm(&span.residual(&delta)) > 1e-8 * (1.0 + norm(&delta)) {
        return Ok(None);
    }
    let coeffs = span.least_squares(&delta);
    let values: Vec<f64> = (0..nx)
        .map(|x| theta_i + dot(&g.at(x), &coeffs) / pi[x])
        .collect();
    let estimator = Estimator::new(values);
    let residual = (0..n)
        .map(|k| (model.mean(&estimator, k) - model.params[k]).abs())
        .fold(0.0, f64::max);
    let scale = model.params.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if residual > 1e-8 * (1.0 + scale) {
        return Ok(None);
    }
    Ok(Some(AnchorSolution {
        estimator,
        coeffs,
        residual,
    }))
}
