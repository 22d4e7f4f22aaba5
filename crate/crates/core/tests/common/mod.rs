//! Random instances shared by the integration tests.
#![allow(dead_code)]

use global_score::classical::{DiscreteModel, Estimator};
use global_score::linalg::{CMatrix, HermMatrix};
use global_score::quantum::Povm;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Model with `n ≤ 5` points and `2..=6` outcomes, plus a random estimator.
pub fn random_classical(rng: &mut ChaCha8Rng) -> (DiscreteModel, Estimator) {
    let n = rng.gen_range(1..=5);
    let nx = rng.gen_range(2..=6);
    let probs: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, nx)).collect();
    let derivs = (0..n)
        .map(|_| {
            let d: Vec<f64> = (0..nx).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mean = d.iter().sum::<f64>() / nx as f64;
            d.into_iter().map(|x| x - mean).collect()
        })
        .collect();
    let params = (0..n).map(|k| k as f64 * 0.5).collect();
    let weights = random_simplex(rng, n);
    let outcomes = (0..nx).map(|x| x.to_string()).collect();
    let model = DiscreteModel::new(outcomes, params, probs, derivs, weights).unwrap();
    let est = Estimator::new((0..nx).map(|_| rng.gen_range(-2.0..2.0)).collect());
    (model, est)
}

fn random_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn random_herm(rng: &mut ChaCha8Rng, dim: usize) -> HermMatrix {
    HermMatrix::from_fn(dim, |_, _| random_c(rng))
}

pub fn random_traceless(rng: &mut ChaCha8Rng, dim: usize) -> HermMatrix {
    let h = random_herm(rng, dim);
    h.sub(&HermMatrix::identity(dim).scale(h.trace() / dim as f64))
}

/// Density matrix of rank at most `rank`.
pub fn random_state_of_rank(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> HermMatrix {
    let a = CMatrix::from_fn(dim, |_, k| {
        if k < rank {
            random_c(rng)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let p = HermMatrix::from_fn(dim, |j, k| {
        (0..dim).map(|l| a.get(j, l) * a.get(k, l).conj()).sum()
    });
    p.scale(1.0 / p.trace())
}

pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> HermMatrix {
    random_state_of_rank(rng, dim, dim)
}

/// `E_x = S^{-1/2} B_x S^{-1/2}` for random positive `B_x`.
pub fn random_povm(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Povm {
    let raw: Vec<HermMatrix> = (0..k).map(|_| random_state(rng, dim)).collect();
    let mut total = HermMatrix::zeros(dim);
    for r in &raw {
        total = total.add(r);
    }
    let inv_sqrt = total.map_eigen(|v| 1.0 / v.sqrt()).unwrap();
    let elements = raw
        .iter()
        .map(|r| {
            let m = inv_sqrt.as_cmatrix().mul(&r.mul(&inv_sqrt));
            HermMatrix::from_fn(dim, |j, k| m.get(j, k))
        })
        .collect();
    Povm::new(elements).unwrap()
}

/// Random unitary from the eigenvectors of a random Hermitian matrix.
pub fn random_unitary(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let e = global_score::linalg::eig_herm(&random_herm(rng, dim)).unwrap();
    CMatrix::from_columns(&e.vectors)
}
