mod common;

use std::f64::consts::PI;

use common::{
    random_classical, random_herm, random_povm, random_state, random_state_of_rank,
    random_traceless, random_unitary, rel,
};
use global_score::bayesian::{
    bayes_bound, integrand, logspace, sweep, BayesKernelConfig, Quadrature,
};
use global_score::classical::{
    bound_general, check_saturation, info_matrix, local_scores, score_system, uniform_weights,
    weighted_variance, DiscreteModel, Estimator, HierarchyMatrix, ScoreSystem,
};
use global_score::estimators::{binary_mle_variance, exact_variance, mc_variance, mle};
use global_score::linalg::{
    dot, eig_sym, in_range, pinv, rayleigh_max, HermMatrix, RayleighResult, SymMatrix,
};
use global_score::quantum::{
    compat_check, induced_model, omega, omega_residual, optimal_povm, q_bounds, q_info_matrix,
    verify_quantum_optimality, BiasSpec, ScoreOperators, StateFamily,
};
use global_score::repetition::{lambda_r, BinaryModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖Π u‖²` for `u = √p (θ̂ − E θ̂)` projected onto the columns `g_j / √p`,
/// by twice-iterated Gram–Schmidt. Nearly dependent columns are dropped.
fn projected_norm(model: &DiscreteModel, est: &Estimator, i: usize) -> f64 {
    let p = model.probs(i);
    let g = local_scores(model);
    let mean = model.mean(est, i);
    let u: Vec<f64> = p
        .iter()
        .zip(est.values())
        .map(|(pi, v)| pi.sqrt() * (v - mean))
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..g.n() {
        let mut z: Vec<f64> = g
            .row(j)
            .iter()
            .zip(p)
            .map(|(gj, pi)| gj / pi.sqrt())
            .collect();
        let start = dot(&z, &z).sqrt();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &z);
                z.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let len = dot(&z, &z).sqrt();
        if len > 1e-9 * start {
            basis.push(z.into_iter().map(|v| v / len).collect());
        }
    }
    basis.iter().map(|q| dot(q, &u).powi(2)).sum()
}

fn random_psd(rng: &mut ChaCha8Rng, k: usize, rank: usize) -> SymMatrix {
    let mut m = SymMatrix::zeros(k);
    for _ in 0..rank {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        m.add_scaled(1.0, &SymMatrix::outer(&v));
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hierarchy_is_ordered_and_bias_is_in_range(seed in any::<u64>()) {
        let (model, est) = random_classical(&mut rng(seed));
        let g = local_scores(&model);
        let sys = score_system(&model, &g, &est).unwrap();
        let report = sys.report().unwrap();
        let var = weighted_variance(&model, &est).unwrap();
        let slack = 1e-9 * report.fg;
        prop_assert!(report.fg >= report.gbar - slack && report.fg >= report.gcr - slack, "{report:?}");
        prop_assert!(var >= report.fg - slack, "variance {var} below fg {}", report.fg);
        for i in 0..model.n_params() {
            prop_assert!(in_range(sys.info(i), sys.bias(i), 1e-8).unwrap());
        }
        let a = report.saturating_a.unwrap();
        let at_optimum = bound_general(&model, &g, &est, &a).unwrap();
        prop_assert!(rel(at_optimum, report.fg) <= 1e-10, "{at_optimum} vs {}", report.fg);
    }

    #[test]
    fn fully_global_level_matches_direct_maximization(seed in any::<u64>()) {
        let (model, est) = random_classical(&mut rng(seed));
        let fg = score_system(&model, &local_scores(&model), &est).unwrap().fg().unwrap();
        let oracle: f64 = (0..model.n_params()).map(|i| model.weights()[i] * projected_norm(&model, &est, i)).sum();
        prop_assert!(rel(fg, oracle) <= 1e-8, "{fg} vs {oracle}");
    }

    #[test]
    fn saturation_implies_variance_equals_fg(seed in any::<u64>()) {
        let (model, _) = random_classical(&mut rng(seed));
        let g = local_scores(&model);
        let est = mle(&model).to_estimator();
        if check_saturation(&model, &g, &est).unwrap().holds {
            let var = weighted_variance(&model, &est).unwrap();
            let fg = score_system(&model, &g, &est).unwrap().fg().unwrap();
            prop_assert!((var - fg).abs() <= 1e-8 * var.max(fg).max(1e-300), "{var} vs {fg}");
        }
    }

    #[test]
    fn single_shot_binary_levels_coincide(
        f in prop::collection::vec(-0.95f64..0.95, 1..6),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let n = f.len();
        let fp: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..1.0) * if r.gen() { 1.0 } else { -1.0 }).collect();
        let params = (0..n).map(|k| k as f64).collect();
        let model = BinaryModel::new(params, f, fp, uniform_weights(n)).unwrap().to_discrete();
        let est = mle(&model).to_estimator();
        let r = score_system(&model, &local_scores(&model), &est).unwrap().report().unwrap();
        prop_assert!(rel(r.fg, r.gcr) <= 1e-12 || (r.fg == 0.0 && r.gcr == 0.0), "{r:?}");
        prop_assert!(r.gbar <= r.fg * (1.0 + 1e-12));
        let exact = weighted_variance(&model, &est).unwrap();
        prop_assert!((exact - r.fg).abs() <= 1e-10 * exact.max(1e-300));
    }

    #[test]
    fn rayleigh_value_dominates_every_quotient(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.gen_range(1..=8);
        let rank = r.gen_range(1..=k);
        let m = random_psd(&mut r, k, rank);
        let y: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mu = m.mul_vec(&y);
        let value = rayleigh_max(&mu, &m).unwrap().value().unwrap();
        prop_assert!(rel(value, m.quad_form(&y)) <= 1e-9);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
            let den = m.quad_form(&x);
            let scale: f64 = x.iter().map(|v| v * v).sum::<f64>() * m.max_abs() * k as f64;
            if den > 1e-6 * scale {
                let num: f64 = mu.iter().zip(&x).map(|(a, b)| a * b).sum();
                prop_assert!(num * num / den <= value * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn pinv_is_an_involution_on_well_conditioned_matrices(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.gen_range(1..=8);
        let mut m = random_psd(&mut r, k, k);
        m.add_scaled(1.0, &SymMatrix::identity(k));
        let back = pinv(&pinv(&m, 1e-12).unwrap(), 1e-12).unwrap();
        let mut diff = back.clone();
        diff.add_scaled(-1.0, &m);
        prop_assert!(diff.max_abs() <= 1e-8 * m.max_abs());
    }

    #[test]
    fn eigendecomposition_reconstructs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.gen_range(1..=10);
        let m = SymMatrix::from_upper(k, |_, _| r.gen_range(-1.0..1.0));
        let e = eig_sym(&m).unwrap();
        for a in 0..k {
            for b in 0..k {
                let ip: f64 = e.vectors[a].iter().zip(&e.vectors[b]).map(|(x, y)| x * y).sum();
                let delta = f64::from(u8::from(a == b));
                prop_assert!((ip - delta).abs() <= 1e-12);
                let rebuilt: f64 = (0..k).map(|l| e.values[l] * e.vectors[l][a] * e.vectors[l][b]).sum();
                prop_assert!((rebuilt - m.get(a, b)).abs() <= 1e-12 * (1.0 + m.max_abs()));
            }
        }
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn overlap_diagonal_is_at_least_one(seed in any::<u64>()) {
        let (model, _) = random_classical(&mut rng(seed));
        let n = model.n_params();
        let (lambda, _) = lambda_r(&model, n - 1);
        for (j, row) in lambda.iter().enumerate() {
            prop_assert!(row[j] >= 1.0 - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn quantum_information_dominates_every_measurement(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dim = r.gen_range(2..=4);
        let n = r.gen_range(1..=4);
        let states = (0..n).map(|_| random_state(&mut r, dim)).collect();
        let dstates = (0..n).map(|_| random_traceless(&mut r, dim)).collect();
        let fam = StateFamily::new((0..n).map(|k| k as f64).collect(), uniform_weights(n), states, dstates).unwrap();
        let scores = ScoreOperators::local(&fam);
        let k = n + 2 + r.gen_range(0..3);
        let povm = random_povm(&mut r, dim, k);
        let (model, gx) = induced_model(&fam, &povm, &scores).unwrap();
        let mut infos = Vec::new();
        for i in 0..n {
            let q = q_info_matrix(&fam, &scores, i).unwrap();
            let c = info_matrix(&model, &gx, i).unwrap();
            for _ in 0..200 {
                let a: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
                prop_assert!(c.quad_form(&a) <= q.quad_form(&a) + 1e-9);
            }
            infos.push(c);
        }
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b = global_score::quantum::score_gram(&scores).mul_vec(&y);
        let qfg = global_score::quantum::q_score_system(&fam, &scores, &BiasSpec::Common(b.clone())).unwrap().fg().unwrap();
        let classical = ScoreSystem::new(uniform_weights(n), infos, vec![b; n]).unwrap();
        if let Ok(cfg) = classical.fg() {
            prop_assert!(cfg >= qfg - 1e-8 * qfg.max(1.0), "{cfg} < {qfg}");
        }
    }

    #[test]
    fn omega_solves_its_defining_equation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dim = r.gen_range(1..=4);
        let rank = r.gen_range(1..=dim);
        let rho = random_state_of_rank(&mut r, dim, rank);
        let x = random_herm(&mut r, dim);
        let om = omega(&rho, &x, 0.0).unwrap();
        let res = omega_residual(&rho, &x, &om).unwrap();
        prop_assert!(res <= 1e-9 * (1.0 + x.frobenius_norm()), "rank {rank}/{dim}: {res}");
    }

    #[test]
    fn optimal_measurement_verifies_on_planar_qubits(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.gen_range(0.1..0.95);
        let n = r.gen_range(1..=4);
        let mut params: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..PI)).collect();
        params.sort_by(f64::total_cmp);
        prop_assume!(params.windows(2).all(|w| w[1] - w[0] > 1e-2));
        let fam = StateFamily::planar_qubit(d, params, uniform_weights(n)).unwrap();
        let scores = ScoreOperators::local(&fam);
        prop_assert!(compat_check(&fam, &scores, 1e-8).unwrap().holds);
        let t = global_score::quantum::score_gram(&scores);
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bias = BiasSpec::Common(t.mul_vec(&y));
        let opt = optimal_povm(&fam, &scores, &bias).unwrap();
        let check = verify_quantum_optimality(&fam, &scores, &opt.povm, &bias).unwrap();
        prop_assert!(check.holds, "{:?} {check:?}", fam.params());
        prop_assert!(rel(check.induced_fg, check.quantum_fg) <= 1e-8);
    }

    #[test]
    fn bounds_are_unitarily_covariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.gen_range(0.2..0.9);
        let fam = StateFamily::planar_qubit(d, vec![0.0, 0.6, 1.7], vec![0.2, 0.5, 0.3]).unwrap();
        let scores = ScoreOperators::local(&fam);
        let bias = BiasSpec::Common(global_score::quantum::score_gram(&scores).mul_vec(&[0.3, -1.0, 0.8]));
        let u = random_unitary(&mut r, 2);
        let (fam_u, scores_u) = (fam.conjugate_by(&u), scores.conjugate_by(&u));
        let a = q_bounds(&fam, &scores, &bias).unwrap();
        let b = q_bounds(&fam_u, &scores_u, &bias).unwrap();
        prop_assert!(rel(b.gcr, a.gcr) <= 1e-9 && rel(b.gbar, a.gbar) <= 1e-9 && rel(b.fg, a.fg) <= 1e-9);
        let p = optimal_povm(&fam, &scores, &bias).unwrap().povm.conjugate_by(&u);
        let q = optimal_povm(&fam_u, &scores_u, &bias).unwrap().povm;
        prop_assert_eq!(p.len(), q.len());
        for e in p.elements() {
            let best = q.elements().iter().map(|f| e.sub(f).frobenius_norm()).fold(f64::MAX, f64::min);
            prop_assert!(best <= 1e-8, "{best}");
        }
    }
}

#[test]
fn monte_carlo_agrees_with_exact_variance() {
    let mut r = rng(11);
    for _ in 0..4 {
        let (model, est) = random_classical(&mut r);
        let exact = exact_variance(&model, &est).unwrap().value;
        for seed in [1, 2024, 99_999] {
            let mc = mc_variance(&model, &est, 20_000, seed).unwrap();
            assert!(
                (mc.value - exact).abs() <= 5.0 * mc.stderr + 1e-12,
                "{} ± {} vs {exact}",
                mc.value,
                mc.stderr
            );
        }
    }
}

#[test]
fn one_shot_binomial_variance_matches_classical_module() {
    let model = BinaryModel::sine(0.7, vec![0.1, 0.9, 2.0, 2.8], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let d = model.to_discrete();
    let direct = weighted_variance(&d, &mle(&d).to_estimator()).unwrap();
    assert!(rel(binary_mle_variance(&model, 1).unwrap().value, direct) <= 1e-12);
}

#[test]
fn general_bound_with_identity_columns_is_a_lower_bound() {
    let mut r = rng(5);
    for _ in 0..50 {
        let (model, est) = random_classical(&mut r);
        let g = local_scores(&model);
        let fg = score_system(&model, &g, &est).unwrap().fg().unwrap();
        let n = model.n_params();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let a = HierarchyMatrix::from_columns(cols).unwrap();
        if let Ok(b) = bound_general(&model, &g, &est, &a) {
            assert!(b <= fg * (1.0 + 1e-9), "{b} > {fg}");
        }
    }
}

#[test]
fn small_kernel_width_recovers_van_trees() {
    for d in [0.2, 0.5, 0.8] {
        for sp in [2.0, 5.0, 10.0] {
            let b = bayes_bound(&BayesKernelConfig::new(d, sp, 1e-4).unwrap()).unwrap();
            let vt = 1.0 / (d * d + 1.0 / (sp * sp));
            assert!(rel(b, vt) <= 1e-3, "d={d} sigma_p={sp}: {b} vs {vt}");
        }
    }
}

#[test]
fn quadrature_is_converged() {
    for eps in [1e-3, 0.5, 2.5, 4.5] {
        let cfg = BayesKernelConfig::new(0.5, 5.0, eps).unwrap();
        let fine = BayesKernelConfig {
            quad: Quadrature {
                points: 4001,
                ..cfg.quad
            },
            ..cfg
        };
        let (a, b) = (bayes_bound(&cfg).unwrap(), bayes_bound(&fine).unwrap());
        assert!(rel(a, b) <= 1e-8, "eps={eps}: {a} vs {b}");
    }
}

#[test]
fn narrow_kernel_integrand_is_prior_weighted_fisher_information() {
    let (d, sp) = (0.5, 5.0);
    let cfg = BayesKernelConfig::new(d, sp, 1e-6).unwrap();
    for k in 0..=80 {
        let t = -4.0 * sp + 0.1 * sp * k as f64;
        let p = (-t * t / (2.0 * sp * sp)).exp() / (2.0 * PI * sp * sp).sqrt();
        let dp = -t / (sp * sp) * p;
        let want = p * d * d + dp * dp / p;
        assert!(rel(integrand(&cfg, t), want) <= 1e-8, "theta={t}");
    }
}

#[test]
fn sweep_is_positive_and_finite_on_the_figure_grid() {
    let curve = sweep(
        &BayesKernelConfig::new(0.5, 5.0, 0.0).unwrap(),
        &logspace(1e-3, 20.0, 41),
    )
    .unwrap();
    assert!(curve.bounds.iter().all(|b| b.is_finite() && *b > 0.0));
    let peak = curve
        .bounds
        .iter()
        .position(|&b| b == curve.max_bound)
        .unwrap();
    assert!(curve.bounds[curve.bounds.len() - 1] < curve.max_bound && peak > 0);
}

#[test]
fn rank_deficient_maximizer_reports_unbounded_outside_range() {
    let m = SymMatrix::from_diag(&[1.0, 0.0]);
    assert_eq!(
        rayleigh_max(&[1.0, 1.0], &m).unwrap(),
        RayleighResult::Unbounded
    );
    let h = HermMatrix::identity(2);
    assert!(omega(&h.scale(0.5), &h, 0.0).is_ok());
}
