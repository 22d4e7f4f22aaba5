//! Kernel-smoothed Bayesian bound for the noisy planar qubit under a
//! Gaussian prior and a Gaussian hierarchy kernel.
//!
//! With `Σ² = ε² + σ_p²` and `α = ε²/Σ²` all kernel integrals are Gaussian
//! and close in elementary functions; only the outer θ integral is done
//! numerically.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub half_width_multiplier: f64,
    pub points: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            half_width_multiplier: 8.0,
            points: 2001,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesKernelConfig {
    pub d: f64,
    pub sigma_p: f64,
    pub eps: f64,
    #[serde(default)]
    pub quad: Quadrature,
}

impl BayesKernelConfig {
    pub fn new(d: f64, sigma_p: f64, eps: f64) -> Result<Self> {
        let cfg = Self {
            d,
            sigma_p,
            eps,
            quad: Quadrature::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_eps(self, eps: f64) -> Result<Self> {
        let cfg = Self { eps, ..self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d < 1.0) {
            return Err(Error::validation(format!(
                "d = {} must lie in (0, 1)",
                self.d
            )));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::validation(format!(
                "sigma_p = {} must be positive",
                self.sigma_p
            )));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::validation(format!(
                "eps = {} must be non-negative",
                self.eps
            )));
        }
        let q = &self.quad;
        if q.points < 51 || q.points.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "quadrature points = {} must be odd and at least 51",
                q.points
            )));
        }
        if !(q.half_width_multiplier > 0.0) {
            return Err(Error::validation(
                "quadrature half-width multiplier must be positive",
            ));
        }
        Ok(())
    }
}

/// Closed-form kernel integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelAux {
    pub sigma2: f64,
    pub alpha: f64,
    eps2: f64,
    sp2: f64,
}

impl KernelAux {
    /// `g(θ) = exp(−θ²/2Σ² − ε²σ_p²/2Σ²)/√(2πΣ²)`.
    pub fn g(&self, theta: f64) -> f64 {
        self.ln_g(theta).exp()
    }

    fn ln_g(&self, theta: f64) -> f64 {
        -theta * theta / (2.0 * self.sigma2)
            - self.eps2 * self.sp2 / (2.0 * self.sigma2)
            - 0.5 * (2.0 * PI * self.sigma2).ln()
    }

    /// `f₃(θ) = −θ exp(−θ²/2Σ²)/(Σ²√(2πΣ²))`.
    pub fn f3(&self, theta: f64) -> f64 {
        -theta / self.sigma2 * (-theta * theta / (2.0 * self.sigma2)).exp()
            / (2.0 * PI * self.sigma2).sqrt()
    }

    /// `f₃/g = −(θ/Σ²)·exp(ε²σ_p²/2Σ²)`.
    fn f3_over_g(&self, theta: f64) -> f64 {
        -theta / self.sigma2 * (self.eps2 * self.sp2 / (2.0 * self.sigma2)).exp()
    }

    pub fn prior(&self, theta: f64) -> f64 {
        self.ln_prior(theta).exp()
    }

    fn ln_prior(&self, theta: f64) -> f64 {
        -theta * theta / (2.0 * self.sp2) - 0.5 * (2.0 * PI * self.sp2).ln()
    }

    pub fn prior_deriv(&self, theta: f64) -> f64 {
        -theta / self.sp2 * self.prior(theta)
    }
}

pub fn kernel_aux(cfg: &BayesKernelConfig) -> KernelAux {
    let eps2 = cfg.eps * cfg.eps;
    let sp2 = cfg.sigma_p * cfg.sigma_p;
    let sigma2 = eps2 + sp2;
    KernelAux {
        sigma2,
        alpha: eps2 / sigma2,
        eps2,
        sp2,
    }
}

/// `(G₊₊, G₋₋, Im G₊₋)` of the smoothed score operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GElements {
    pub pp: f64,
    pub mm: f64,
    pub pm_imag: f64,
}

/// Elements divided by `g(θ)`; finite where `g` underflows.
fn scaled_elements(cfg: &BayesKernelConfig, aux: &KernelAux, theta: f64) -> GElements {
    let d = cfg.d;
    let (s, c) = (aux.alpha * theta).sin_cos();
    let half_f3 = 0.5 * aux.f3_over_g(theta);
    let diag = d / (2.0 * aux.sigma2) * (theta * c + aux.eps2 * s) - 0.5 * d * s;
    GElements {
        pp: half_f3 - diag,
        mm: half_f3 + diag,
        pm_imag: d / (2.0 * aux.sigma2) * (theta * s + aux.sp2 * c),
    }
}

pub fn gmatrix_elements(cfg: &BayesKernelConfig, theta: f64) -> GElements {
    let aux = kernel_aux(cfg);
    let g = aux.g(theta);
    let e = scaled_elements(cfg, &aux, theta);
    GElements {
        pp: g * e.pp,
        mm: g * e.mm,
        pm_imag: g * e.pm_imag,
    }
}

/// `2G₊₊²/((1+d)p) + 2G₋₋²/((1−d)p) + 4(Im G₊₋)²/p`.
pub fn integrand(cfg: &BayesKernelConfig, theta: f64) -> f64 {
    let aux = kernel_aux(cfg);
    integrand_with(cfg, &aux, theta)
}

fn integrand_with(cfg: &BayesKernelConfig, aux: &KernelAux, theta: f64) -> f64 {
    let e = scaled_elements(cfg, aux, theta);
    let weight = (2.0 * aux.ln_g(theta) - aux.ln_prior(theta)).exp();
    let d = cfg.d;
    weight
        * (2.0 * e.pp * e.pp / (1.0 + d)
            + 2.0 * e.mm * e.mm / (1.0 - d)
            + 4.0 * e.pm_imag * e.pm_imag)
}

/// `1/(d² + 1/σ_p²)`.
pub fn van_trees(d: f64, sigma_p: f64) -> f64 {
    1.0 / (d * d + 1.0 / (sigma_p * sigma_p))
}

/// `1/∫ integrand dθ` by composite Simpson; `eps = 0` uses the closed form.
pub fn bayes_bound(cfg: &BayesKernelConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.eps == 0.0 {
        return Ok(van_trees(cfg.d, cfg.sigma_p));
    }
    let aux = kernel_aux(cfg);
    let half = cfg.quad.half_width_multiplier * (aux.sigma2 + aux.sp2).sqrt();
    let n = cfg.quad.points - 1;
    let h = 2.0 * half / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * integrand_with(cfg, &aux, -half + k as f64 * h);
    }
    let integral = sum * h / 3.0;
    if !(integral > 1e-300) || !integral.is_finite() {
        return Err(Error::QuadratureUnderflow(integral));
    }
    Ok(1.0 / integral)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesCurve {
    pub eps_grid: Vec<f64>,
    pub bounds: Vec<f64>,
    pub argmax_eps: f64,
    pub max_bound: f64,
    /// Bound at the smallest positive grid width.
    pub vantrees: f64,
    /// `1/(d² + 1/σ_p²)`.
    pub vantrees_ref: f64,
}

/// Bound at every grid width; points are evaluated on scoped threads and
/// returned in grid order.
pub fn sweep(cfg: &BayesKernelConfig, eps_grid: &[f64]) -> Result<BayesCurve> {
    if eps_grid.is_empty() {
        return Err(Error::validation("empty eps grid"));
    }
    if eps_grid.iter().any(|e| !(*e >= 0.0)) || eps_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation(
            "eps grid must be non-negative and strictly increasing",
        ));
    }
    let bounds: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = eps_grid
            .iter()
            .map(|&e| s.spawn(move || bayes_bound(&cfg.with_eps(e)?)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("quadrature thread panicked"))
            .collect()
    });
    let bounds = bounds.into_iter().collect::<Result<Vec<f64>>>()?;
    let (mut best, mut max_bound) = (0, bounds[0]);
    for (k, &b) in bounds.iter().enumerate() {
        if b > max_bound {
            best = k;
            max_bound = b;
        }
    }
    let vantrees = match eps_grid.iter().position(|&e| e > 0.0) {
        Some(k) => bounds[k],
        None => bounds[0],
    };
    Ok(BayesCurve {
        eps_grid: eps_grid.to_vec(),
        bounds,
        argmax_eps: eps_grid[best],
        max_bound,
        vantrees,
        vantrees_ref: van_trees(cfg.d, cfg.sigma_p),
    })
}

/// `count` points spaced evenly in log between `lo` and `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}
