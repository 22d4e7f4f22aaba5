//! Maximum-likelihood estimation on a finite grid and exact / Monte-Carlo
//! variance evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::{self, DiscreteModel, Estimator};
use crate::error::{Error, Result};
use crate::repetition::{BinaryModel, MAX_SHOTS};

/// Algorithm identifier recorded next to every Monte-Carlo seed.
pub const RNG_ALGORITHM: &str = "chacha8";
const SHARDS: u64 = 8;
const TIE_TOL: f64 = 1e-12;

/// Compensated summation (Neumaier's variant of Kahan's algorithm).
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + c
}

/// Index of the maximum, preferring the lowest index among near-ties.
fn argmax_low(scores: impl Iterator<Item = f64> + Clone) -> usize {
    let best = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + best.abs());
    scores
        .into_iter()
        .position(|s| s >= best - tol)
        .unwrap_or(0)
}

/// Per-outcome grid index maximizing `p(x|θ_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleEstimator {
    assignment: Vec<usize>,
    values: Vec<f64>,
}

impl MleEstimator {
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_estimator(&self) -> Estimator {
        Estimator::new(self.values.clone())
    }
}

pub fn mle(model: &DiscreteModel) -> MleEstimator {
    let n = model.n_params();
    let assignment: Vec<usize> = (0..model.n_outcomes())
        .map(|x| argmax_low((0..n).map(move |i| model.probs(i)[x].ln())))
        .collect();
    let values = assignment.iter().map(|&i| model.params()[i]).collect();
    MleEstimator { assignment, values }
}

/// MLE of the m-shot binary model as a function of the count `k` of `+1`
/// outcomes, `k = 0..=m`.
pub fn binary_mle_table(model: &BinaryModel, m: u32) -> Result<Vec<f64>> {
    if m == 0 || m > MAX_SHOTS {
        return Err(Error::validation(format!(
            "repetition count {m} outside 1..={MAX_SHOTS}"
        )));
    }
    let logs: Vec<(f64, f64)> = model
        .f()
        .iter()
        .map(|f| (f.ln_1p(), (-f).ln_1p()))
        .collect();
    Ok((0..=m)
        .map(|k| {
            let (kf, rest) = (k as f64, (m - k) as f64);
            model.params()[argmax_low(logs.iter().map(|(a, b)| kf * a + rest * b))]
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceMethod {
    Exact,
    Binomial,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    pub stderr: f64,
    pub seed: Option<u64>,
    pub rng: Option<String>,
}

pub fn exact_variance(model: &DiscreteModel, est: &Estimator) -> Result<VarianceEstimate> {
    Ok(VarianceEstimate {
        value: classical::weighted_variance(model, est)?,
        method: VarianceMethod::Exact,
        stderr: 0.0,
        seed: None,
        rng: None,
    })
}

/// Exact weighted variance of the m-shot MLE through the binomial count.
pub fn binary_mle_variance(model: &BinaryModel, m: u32) -> Result<VarianceEstimate> {
    let table = binary_mle_table(model, m)?;
    let value = count_estimator_variance(model, m, &table);
    Ok(VarianceEstimate {
        value,
        method: VarianceMethod::Binomial,
        stderr: 0.0,
        seed: None,
        rng: None,
    })
}

/// Weighted variance of any estimator of the count `k`.
pub fn count_estimator_variance(model: &BinaryModel, m: u32, est: &[f64]) -> f64 {
    kahan_sum((0..model.n()).map(|i| {
        let pmf: Vec<f64> = model.log_pmf(i, m).into_iter().map(f64::exp).collect();
        let mean = kahan_sum(pmf.iter().zip(est).map(|(p, t)| p * t));
        model.weights()[i] * kahan_sum(pmf.iter().zip(est).map(|(p, t)| p * (t - mean).powi(2)))
    }))
}

/// Sample-variance estimate from `shots` draws per grid point.
///
/// Each grid point is split into fixed shards, shard `s` of point `i` drawing
/// from ChaCha8 stream `i·8 + s` of `seed`; counts are reduced in shard order,
/// so results do not depend on thread scheduling.
pub fn mc_variance(
    model: &DiscreteModel,
    est: &Estimator,
    shots: u64,
    seed: u64,
) -> Result<VarianceEstimate> {
    if shots < 100 {
        return Err(Error::validation(format!(
            "shots = {shots} must be at least 100"
        )));
    }
    if est.values().len() != model.n_outcomes() {
        return Err(Error::validation(
            "estimator and model outcome counts differ",
        ));
    }
    let nx = model.n_outcomes();
    let mut value = 0.0;
    let mut var_of_value = 0.0;
    for i in 0..model.n_params() {
        let cdf: Vec<f64> = model
            .probs(i)
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let counts: Vec<Vec<u64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..SHARDS)
                .map(|s| {
                    let cdf = &cdf;
                    let n = shots / SHARDS + u64::from(s < shots % SHARDS);
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64 * SHARDS + s);
                        let mut c = vec![0u64; nx];
                        let total = *cdf.last().expect("non-empty");
                        for _ in 0..n {
                            let u: f64 = rng.gen::<f64>() * total;
                            let x = cdf.partition_point(|&v| v <= u).min(nx - 1);
                            c[x] += 1;
                        }
                        c
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling thread panicked"))
                .collect()
        });
        let mut total = vec![0u64; nx];
        for c in &counts {
            total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
        }
        let nf = shots as f64;
        let mean = total
            .iter()
            .zip(est.values())
            .map(|(&c, t)| c as f64 * t)
            .sum::<f64>()
            / nf;
        let m2 = total
            .iter()
            .zip(est.values())
            .map(|(&c, t)| c as f64 * (t - mean).powi(2))
            .sum::<f64>();
        let m4 = total
            .iter()
            .zip(est.values())
            .map(|(&c, t)| c as f64 * (t - mean).powi(4))
            .sum::<f64>()
            / nf;
        let s2 = m2 / (nf - 1.0);
        let var_s2 = ((m4 - s2 * s2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
        let w = model.weights()[i];
        value += w * s2;
        var_of_value += w * w * var_s2;
    }
    Ok(VarianceEstimate {
        value,
        method: VarianceMethod::MonteCarlo,
        stderr: var_of_value.sqrt(),
        seed: Some(seed),
        rng: Some(RNG_ALGORITHM.into()),
    })
}
