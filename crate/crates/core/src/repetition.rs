//! i.i.d. repetitions: product models, the closed-form m-shot information
//! matrix of two-outcome models, and the many-repetition ratio diagnostic.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::classical::{self, check_weights, DiscreteModel, Estimator, ScoreFactor, ScoreSystem};
use crate::error::{Error, Result};
use crate::estimators::{self, kahan_sum};
use crate::linalg::SymMatrix;

/// Joint-outcome cap for explicit product enumeration.
pub const ENUMERATION_CAP: usize = 1 << 20;
/// Largest repetition count accepted by the closed-form binary path.
pub const MAX_SHOTS: u32 = 10_000;

/// Two-outcome model `p(±1|θ) = (1 ± f(θ))/2` sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    params: Vec<f64>,
    f: Vec<f64>,
    fprime: Vec<f64>,
    weights: Vec<f64>,
}

impl BinaryModel {
    pub fn new(params: Vec<f64>, f: Vec<f64>, fprime: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = params.len();
        if n == 0 || f.len() != n || fprime.len() != n {
            return Err(Error::validation(
                "params, f and fprime must be non-empty and of equal length",
            ));
        }
        if (1..n).any(|i| !(params[i] > params[i - 1])) {
            return Err(Error::validation("params must be strictly increasing"));
        }
        if let Some(i) = f.iter().position(|v| !(v.abs() < 1.0)) {
            return Err(Error::validation(format!(
                "|f_{i}| = {} must be below 1",
                f[i].abs()
            )));
        }
        if fprime.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("fprime must be finite"));
        }
        check_weights(&weights, n)?;
        Ok(Self {
            params,
            f,
            fprime,
            weights,
        })
    }

    /// `f(θ) = d·sinθ`.
    pub fn sine(d: f64, params: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::validation(format!("d = {d} must lie in (0, 1)")));
        }
        let f = params.iter().map(|t| d * t.sin()).collect();
        let fprime = params.iter().map(|t| d * t.cos()).collect();
        Self::new(params, f, fprime, weights)
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn fprime(&self) -> &[f64] {
        &self.fprime
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Single-shot table with outcomes `+1`, `-1`.
    pub fn to_discrete(&self) -> DiscreteModel {
        let probs = self
            .f
            .iter()
            .map(|f| vec![(1.0 + f) / 2.0, (1.0 - f) / 2.0])
            .collect();
        let derivs = self
            .fprime
            .iter()
            .map(|d| vec![d / 2.0, -d / 2.0])
            .collect();
        DiscreteModel::new(
            vec!["+1".into(), "-1".into()],
            self.params.clone(),
            probs,
            derivs,
            self.weights.clone(),
        )
        .expect("a valid binary model tabulates to a valid discrete model")
    }

    /// `ln B(k; m, q_i)` for `k = 0..=m`, `q_i = (1+f_i)/2`.
    pub(crate) fn log_pmf(&self, i: usize, m: u32) -> Vec<f64> {
        let ln_q = self.f[i].ln_1p() - LN_2;
        let ln_1q = (-self.f[i]).ln_1p() - LN_2;
        let mut ln_choose = 0.0;
        (0..=m)
            .map(|k| {
                let v = ln_choose + k as f64 * ln_q + (m - k) as f64 * ln_1q;
                ln_choose += ((m - k) as f64).ln() - ((k + 1) as f64).ln();
                v
            })
            .collect()
    }

    /// `∂_θ ln B(k; m, q_i)` for `k = 0..=m`.
    pub(crate) fn log_pmf_slope(&self, i: usize, m: u32) -> Vec<f64> {
        let q = (1.0 + self.f[i]) / 2.0;
        let half = self.fprime[i] / 2.0;
        (0..=m)
            .map(|k| (k as f64 / q - (m - k) as f64 / (1.0 - q)) * half)
            .collect()
    }
}

/// `θ_k = kπ/n`, `k = 0..n`: uniform on `[0, π)`, containing 0 and π/2 when
/// `n` is even.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / n as f64).collect()
}

/// m-fold i.i.d. extension by explicit enumeration.
pub fn product_model(base: &DiscreteModel, m: u32) -> Result<DiscreteModel> {
    if m == 0 {
        return Err(Error::validation("repetition count must be positive"));
    }
    let nx = base.n_outcomes();
    let total = (nx as f64).powi(m as i32);
    if total > ENUMERATION_CAP as f64 {
        return Err(Error::EnumerationCap {
            outcomes: total,
            cap: ENUMERATION_CAP,
        });
    }
    if m == 1 {
        return Ok(base.clone());
    }
    let total = total as usize;
    let tuples: Vec<Vec<usize>> = (0..total)
        .map(|mut idx| {
            let mut t = vec![0; m as usize];
            for slot in t.iter_mut().rev() {
                *slot = idx % nx;
                idx /= nx;
            }
            t
        })
        .collect();
    let outcomes = tuples
        .iter()
        .map(|t| {
            t.iter()
                .map(|&x| base.outcomes()[x].as_str())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let n = base.n_params();
    let mut probs = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    for i in 0..n {
        let p = base.probs(i);
        let dp = base.derivs(i);
        let score: Vec<f64> = dp.iter().zip(p).map(|(d, q)| d / q).collect();
        let row: Vec<f64> = tuples
            .iter()
            .map(|t| t.iter().map(|&x| p[x]).product())
            .collect();
        let drow = tuples
            .iter()
            .zip(&row)
            .map(|(t, pr)| pr * t.iter().map(|&x| score[x]).sum::<f64>())
            .collect();
        probs.push(row);
        derivs.push(drow);
    }
    Ok(DiscreteModel::new_unchecked(
        outcomes,
        base.params().to_vec(),
        probs,
        derivs,
        base.weights().to_vec(),
    ))
}

/// `h(m, x) = (1+x)^(m−2) (1+mx)` evaluated in the log domain, `x > −1`.
pub fn h(m: u32, x: f64) -> f64 {
    let lin = 1.0 + m as f64 * x;
    if lin == 0.0 {
        return 0.0;
    }
    let log_mag = (m as f64 - 2.0) * x.ln_1p() + lin.abs().ln();
    lin.signum() * log_mag.exp()
}

/// `[C^(i)(m)]_jk = m·h(m, Δ_jk)·f'_j f'_k / (1 − f_i²)` with
/// `Δ_jk = (f_j − f_i)(f_k − f_i)/(1 − f_i²)`.
pub fn binary_cim(model: &BinaryModel, i: usize, m: u32) -> SymMatrix {
    let (f, fp) = (&model.f, &model.fprime);
    let den = 1.0 - f[i] * f[i];
    SymMatrix::from_upper(model.n(), |j, k| {
        let delta = (f[j] - f[i]) * (f[k] - f[i]) / den;
        m as f64 * h(m, delta) * fp[j] * fp[k] / den
    })
}

/// Single-shot overlaps relative to the reference point `r`:
/// `Λ_jk = Σ_x p_j p_k / p_r` and `R_jk = Σ_x p_k ∂p_j / p_r`.
pub fn lambda_r(model: &DiscreteModel, r: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = model.n_params();
    let pr = model.probs(r);
    let pair = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(pr).map(|((x, y), z)| x * y / z).sum()
    };
    let lambda = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| pair(model.probs(j), model.probs(k)))
                .collect()
        })
        .collect();
    let rmat = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| pair(model.probs(k), model.derivs(j)))
                .collect()
        })
        .collect();
    (lambda, rmat)
}

/// m-shot information matrix at the reference point from single-shot
/// quantities: `m(m−1)Λ^(m−2) R_jk R_kj + m Λ^(m−1) C(1)_jk`.
pub fn repeated_info_matrix(model: &DiscreteModel, r: usize, m: u32) -> Result<SymMatrix> {
    let (lambda, rmat) = lambda_r(model, r);
    let c1 = classical::info_matrix(model, &classical::local_scores(model), r)?;
    let mf = m as f64;
    Ok(SymMatrix::from_upper(model.n_params(), |j, k| {
        let l = lambda[j][k];
        mf * (mf - 1.0) * l.powi(m as i32 - 2) * rmat[j][k] * rmat[k][j]
            + mf * l.powi(m as i32 - 1) * c1.get(j, k)
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionDiag {
    pub m: u32,
    pub b_fg: f64,
    pub b_gcr: f64,
    pub b_gbar: f64,
    pub ratio_fg_gcr: f64,
    /// Relative to the last grid point.
    pub lambda: Vec<Vec<f64>>,
    pub rmat: Vec<Vec<f64>>,
}

/// Model accepted by [`obs1_diag`].
#[derive(Clone, Copy, Debug)]
pub enum Repeated<'a> {
    Binary(&'a BinaryModel),
    Discrete(&'a DiscreteModel),
}

/// FG and GCR of the m-shot model with local scores and the m-shot MLE,
/// with their ratio, for each `m`.
pub fn obs1_diag(model: Repeated<'_>, m_list: &[u32]) -> Result<Vec<RepetitionDiag>> {
    let single = match model {
        Repeated::Binary(b) => b.to_discrete(),
        Repeated::Discrete(d) => d.clone(),
    };
    let (lambda, rmat) = lambda_r(&single, single.n_params() - 1);
    let mut out = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let sys = match model {
            Repeated::Binary(b) => {
                let est = estimators::binary_mle_table(b, m)?;
                binary_score_system(b, m, &est)?
            }
            Repeated::Discrete(d) => {
                let prod = product_model(d, m)?;
                let est = estimators::mle(&prod).to_estimator();
                classical::score_system(&prod, &classical::local_scores(&prod), &est)?
            }
        };
        let b_fg = sys.fg()?;
        let b_gcr = sys.gcr()?;
        let b_gbar = sys.gbar()?;
        out.push(RepetitionDiag {
            m,
            b_fg,
            b_gcr,
            b_gbar,
            ratio_fg_gcr: ratio(b_fg, b_gcr),
            lambda: lambda.clone(),
            rmat: rmat.clone(),
        });
    }
    Ok(out)
}

fn ratio(fg: f64, gcr: f64) -> f64 {
    if gcr > 0.0 {
        fg / gcr
    } else if fg == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Score system of the m-shot binary model for an estimator of the count
/// `k` of `+1` outcomes (`est[k]`, `k = 0..=m`), with local scores.
///
/// Information matrices come from [`binary_cim`]; the square-root factors
/// live on the sufficient statistic.
pub fn binary_score_system(model: &BinaryModel, m: u32, est: &[f64]) -> Result<ScoreSystem> {
    if m == 0 || m > MAX_SHOTS {
        return Err(Error::validation(format!(
            "repetition count {m} outside 1..={MAX_SHOTS}"
        )));
    }
    if est.len() != m as usize + 1 {
        return Err(Error::validation(
            "estimator must give one value per count 0..=m",
        ));
    }
    let n = model.n();
    let log_pmf: Vec<Vec<f64>> = (0..n).map(|i| model.log_pmf(i, m)).collect();
    let slope: Vec<Vec<f64>> = (0..n).map(|i| model.log_pmf_slope(i, m)).collect();
    let means: Vec<f64> = (0..n)
        .map(|i| kahan_sum(log_pmf[i].iter().zip(est).map(|(l, t)| l.exp() * t)))
        .collect();
    // b_j = Σ_k ∂B_j(k) [θ̂(k) − E_j θ̂], common to every i.
    let bias: Vec<f64> = (0..n)
        .map(|j| {
            kahan_sum(
                (0..=m as usize).map(|k| log_pmf[j][k].exp() * slope[j][k] * (est[k] - means[j])),
            )
        })
        .collect();
    let mut info = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n);
    for i in 0..n {
        info.push(binary_cim(model, i, m));
        let columns = (0..n)
            .map(|j| {
                (0..=m as usize)
                    .map(|k| (log_pmf[j][k] - 0.5 * log_pmf[i][k]).exp() * slope[j][k])
                    .collect()
            })
            .collect();
        let u = (0..=m as usize)
            .map(|k| (0.5 * log_pmf[i][k]).exp() * (est[k] - means[i]))
            .collect();
        factors.push(ScoreFactor { columns, u });
    }
    ScoreSystem::new(model.weights.clone(), info, vec![bias; n])?.with_factors(factors)
}

/// Convenience: the m-shot discrete score system for a count-based estimator,
/// used to cross-check the sufficient-statistic route.
pub fn count_estimator_on_product(
    model: &BinaryModel,
    m: u32,
    est: &[f64],
) -> Result<(DiscreteModel, Estimator)> {
    let prod = product_model(&model.to_discrete(), m)?;
    let values = prod
        .outcomes()
        .iter()
        .map(|o| est[o.split(',').filter(|s| *s == "+1").count()])
        .collect();
    Ok((prod, Estimator::new(values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{info_matrix, local_scores};

    fn example() -> BinaryModel {
        BinaryModel::sine(0.5, vec![0.0, PI / 2.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn h_identities() {
        for m in 1..40 {
            assert_eq!(h(m, 0.0), 1.0);
        }
        for x in [-0.9, -0.3, 0.0, 0.4, 2.0] {
            assert!((h(1, x) - 1.0).abs() < 1e-14);
        }
        assert!((h(3, 0.5) - 1.5 * 2.5).abs() < 1e-14);
        assert!((h(4, -0.5) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_shot_cim_is_outer_product() {
        let b = example();
        for i in 0..2 {
            let c = binary_cim(&b, i, 1);
            let den = 1.0 - b.f()[i].powi(2);
            for j in 0..2 {
                for k in 0..2 {
                    assert!((c.get(j, k) - b.fprime()[j] * b.fprime()[k] / den).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn two_shot_cim_matches_enumeration() {
        let b = example();
        let c = binary_cim(&b, 0, 2);
        assert!((c.get(0, 0) - 0.5).abs() < 1e-15);
        assert!(c.get(1, 1).abs() < 1e-30);
        let prod = product_model(&b.to_discrete(), 2).unwrap();
        assert_eq!(prod.n_outcomes(), 4);
        assert!((prod.probs(1)[0] - 0.75f64.powi(2)).abs() < 1e-15);
        let brute = info_matrix(&prod, &local_scores(&prod), 0).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!((brute.get(j, k) - c.get(j, k)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn product_of_single_outcome_stays_deterministic() {
        let base = DiscreteModel::new(
            vec!["x".into()],
            vec![0.0, 1.0],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = product_model(&base, 5).unwrap();
        assert_eq!(p.n_outcomes(), 1);
        assert_eq!(p.probs(0), &[1.0]);
    }

    #[test]
    fn enumeration_cap() {
        let base = example().to_discrete();
        assert!(matches!(
            product_model(&base, 21),
            Err(Error::EnumerationCap { .. })
        ));
        assert_eq!(product_model(&base, 1).unwrap(), base);
    }

    #[test]
    fn normalization_identities_of_lambda_and_r() {
        let b = BinaryModel::sine(0.5, uniform_grid(5), classical::uniform_weights(5)).unwrap();
        let d = b.to_discrete();
        for r in 0..5 {
            let (lambda, rmat) = lambda_r(&d, r);
            for j in 0..5 {
                assert!((lambda[j][r] - 1.0).abs() < 1e-14);
                assert!(rmat[j][r].abs() < 1e-15);
                assert!(lambda[j][j] >= 1.0 - 1e-14);
            }
        }
        let same = DiscreteModel::new(
            vec!["a".into(), "b".into()],
            vec![0.0, 1.0, 2.0],
            vec![vec![0.4, 0.6]; 3],
            vec![vec![0.0, 0.0]; 3],
            classical::uniform_weights(3),
        )
        .unwrap();
        let (lambda, _) = lambda_r(&same, 2);
        assert!(lambda.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn repeated_info_matrix_agrees_with_enumeration() {
        let b = BinaryModel::new(
            vec![0.0, 1.0, 2.0],
            vec![0.3, -0.5, 0.1],
            vec![0.7, 0.2, -0.4],
            classical::uniform_weights(3),
        )
        .unwrap();
        let d = b.to_discrete();
        for m in 1..=5 {
            let prod = product_model(&d, m).unwrap();
            for r in 0..3 {
                let brute = info_matrix(&prod, &local_scores(&prod), r).unwrap();
                let closed = repeated_info_matrix(&d, r, m).unwrap();
                let cim = binary_cim(&b, r, m);
                let scale = brute.max_abs();
                for j in 0..3 {
                    for k in 0..3 {
                        assert!((closed.get(j, k) - brute.get(j, k)).abs() < 1e-12 * scale);
                        assert!((cim.get(j, k) - brute.get(j, k)).abs() < 1e-12 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn sufficient_statistic_system_matches_product_enumeration() {
        let b = BinaryModel::sine(0.5, uniform_grid(4), classical::uniform_weights(4)).unwrap();
        for m in 1..=6 {
            let est = estimators::binary_mle_table(&b, m).unwrap();
            let suff = binary_score_system(&b, m, &est).unwrap();
            let (prod, pest) = count_estimator_on_product(&b, m, &est).unwrap();
            let brute = classical::score_system(&prod, &local_scores(&prod), &pest).unwrap();
            for (x, y) in [
                (suff.fg().unwrap(), brute.fg().unwrap()),
                (suff.gcr().unwrap(), brute.gcr().unwrap()),
                (suff.gbar().unwrap(), brute.gbar().unwrap()),
            ] {
                assert!((x - y).abs() <= 1e-10 * y.abs(), "m={m}: {x} vs {y}");
            }
            for i in 0..4 {
                for j in 0..4 {
                    assert!((suff.bias(i)[j] - brute.bias(i)[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_shot_ratio_is_one() {
        let b = BinaryModel::sine(0.5, uniform_grid(8), classical::uniform_weights(8)).unwrap();
        let d = obs1_diag(Repeated::Binary(&b), &[1]).unwrap();
        assert!((d[0].ratio_fg_gcr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_and_binary_paths_agree() {
        let b = BinaryModel::sine(0.5, uniform_grid(4), classical::uniform_weights(4)).unwrap();
        let d = b.to_discrete();
        let x = obs1_diag(Repeated::Binary(&b), &[1, 3, 5]).unwrap();
        let y = obs1_diag(Repeated::Discrete(&d), &[1, 3, 5]).unwrap();
        for (a, c) in x.iter().zip(&y) {
            assert!((a.ratio_fg_gcr - c.ratio_fg_gcr).abs() < 1e-10);
            assert!((a.b_fg - c.b_fg).abs() < 1e-10 * c.b_fg);
        }
    }
}
