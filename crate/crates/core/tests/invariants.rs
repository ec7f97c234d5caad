//! Cross-module structural invariants on randomized and fixed sample
//! families.

use spde_core::curves::AnalyticCurve;
use spde_core::expansion::{expand, solve_mild};
use spde_core::musiela::{
    hjm_drift, musiela_problem, ExtensionOperator, HJMModel,
};
use spde_core::samples;
use spde_core::space::{restrict_to_halfline, GridFunction, GridSpec, WeightedSpace};
use spde_core::stochastic::{
    lp_norm_estimate, sample_wiener_increments, stoch_convolution, NoiseModel, SemigroupParams,
    TimeGrid,
};
use std::sync::Arc;

fn spec() -> GridSpec {
    GridSpec::new(-16.0, 24.0, 1281).unwrap()
}

#[test]
fn cauchy_schwarz_and_triangle_on_random_curves() {
    let spec = spec();
    let sp = WeightedSpace::new(1.0, spec).unwrap();
    let curves: Vec<GridFunction> = samples::randomized_curves(2024, 12)
        .into_iter()
        .map(|c| c.to_grid(spec))
        .collect();
    for f in &curves {
        for g in &curves {
            let ip = sp.inner_product(f, g).unwrap();
            let nf = sp.norm(f).unwrap();
            let ng = sp.norm(g).unwrap();
            assert!(
                ip.abs() <= nf * ng * (1.0 + 1e-10) + 1e-12,
                "Cauchy-Schwarz violated: |{ip}| > {nf} * {ng}"
            );
            let sum_norm = sp.norm(&f.add(g).unwrap()).unwrap();
            assert!(
                sum_norm <= nf + ng + 1e-10,
                "triangle inequality violated: {sum_norm} > {nf} + {ng}"
            );
        }
        // Homogeneity.
        let nf = sp.norm(f).unwrap();
        let scaled = sp.norm(&f.scaled(-2.5)).unwrap();
        assert!((scaled - 2.5 * nf).abs() < 1e-9 * (1.0 + nf));
    }
}

#[test]
fn halfline_embedding_constant_is_uniform() {
    // sup_x |f(x)| <= C ||f||_{H(R+)}: measure C once over the suite, then
    // assert the same constant (with a little headroom) across all samples.
    let half = GridSpec::half_line(24.0, 769).unwrap();
    let sp = WeightedSpace::new(1.0, half).unwrap();
    let suite = samples::sample_suite(half, 1.0);
    let mut measured: f64 = 0.0;
    for f in &suite {
        let norm = sp.norm(f).unwrap();
        if norm < 1e-12 {
            continue;
        }
        let sup = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        measured = measured.max(sup / norm);
    }
    let c = measured * 1.0001;
    for curve in samples::randomized_curves(99, 10) {
        let f = curve.to_grid(half);
        let norm = sp.norm(&f).unwrap();
        if norm < 1e-12 {
            continue;
        }
        let sup = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(
            sup <= c * norm,
            "embedding constant exceeded: sup = {sup}, C * norm = {}",
            c * norm
        );
    }
}

#[test]
fn ensembles_are_bit_exact_across_thread_counts() {
    let spec = spec();
    let sp = WeightedSpace::new(1.0, spec).unwrap();
    let tg = TimeGrid::new(1.0, 8).unwrap();
    let sigma = AnalyticCurve::bump(1.0, 1.2, 0.4).to_grid(spec);
    let noise = NoiseModel::new(vec![sigma], 77, &sp).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let incs = Arc::new(sample_wiener_increments(1, tg, 16, 77));
            let ens =
                stoch_convolution(&SemigroupParams::shift_only(), &noise, tg, &incs, 0).unwrap();
            let mut flat = Vec::new();
            for p in &ens.states {
                for s in p {
                    flat.extend_from_slice(&s.values);
                }
            }
            flat
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b, "ensembles differ across thread counts");
}

#[test]
fn bm_sup_norm_matches_independent_oracle() {
    // sigma = 1 (test hook) with the identity-like shift semigroup turns the
    // convolution into W itself; the C^2 norm estimate is then
    // sqrt(E max_j |W_{t_j}|^2), which an independent random-walk simulation
    // reproduces within Monte Carlo error.
    use rand::prelude::*;
    let spec = spec();
    let sp = WeightedSpace::new(1.0, spec).unwrap();
    let tg = TimeGrid::new(1.0, 16).unwrap();
    let noise = NoiseModel::new_unchecked(vec![GridFunction::constant(spec, 1.0)], 5);
    let n_paths = 4000;
    let incs = Arc::new(sample_wiener_increments(1, tg, n_paths, 5));
    let ens = stoch_convolution(&SemigroupParams::shift_only(), &noise, tg, &incs, 0).unwrap();
    let estimate = lp_norm_estimate(&ens, 2.0, &sp).unwrap();

    let mut rng = StdRng::seed_from_u64(999);
    let dt = tg.dt();
    let oracle_paths = 200_000;
    let mut acc = 0.0;
    for _ in 0..oracle_paths {
        let mut w = 0.0_f64;
        let mut sup: f64 = 0.0;
        for _ in 0..tg.n_steps {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            w += z * dt.sqrt();
            sup = sup.max(w.abs());
        }
        acc += sup * sup;
    }
    let oracle = (acc / oracle_paths as f64).sqrt();
    // Combined 3-sigma band, dominated by the 4000-path estimate.
    let tol = 3.0 * oracle * (2.0 / n_paths as f64).sqrt();
    assert!(
        (estimate - oracle).abs() < tol,
        "sup-norm estimate {estimate} vs oracle {oracle} (tol {tol})"
    );
}

#[test]
fn musiela_norm_comparison_holds_on_halfline() {
    // || v_eps - u ||_{C^p(H(R+))} <= sum eps^k ||v_k|| / k! + ||R||,
    // all norms restricted to the half-line.
    let half = GridSpec::half_line(24.0, 1537).unwrap();
    let full = GridSpec::new(-16.0, 24.0, 2561).unwrap();
    let sigmas = vec![
        AnalyticCurve::bump(1.0, 1.2, 0.2).to_grid(half),
        AnalyticCurve::bump(3.0, 1.5, 0.15).to_grid(half),
    ];
    let u0 = AnalyticCurve::step(1.0, 1.0, 0.02, 0.01).to_grid(half);
    let model = HJMModel::new(sigmas, u0, 2, 1.0, 11).unwrap();
    let ext = ExtensionOperator::new(half, full, 1.0, 4).unwrap();
    let tg = TimeGrid::new(1.0, 16).unwrap();
    let ps = musiela_problem(&model, &ext, tg, 8).unwrap();
    let eps = 0.125;
    let expansion = expand(&ps, &[eps], false).unwrap();

    let half_sp = WeightedSpace::new(1.0, half).unwrap();
    let restrict_ens = |ens: &spde_core::stochastic::PathEnsemble| {
        let states: Vec<Vec<GridFunction>> = ens
            .states
            .iter()
            .map(|p| p.iter().map(|g| restrict_to_halfline(g, 1.0).unwrap()).collect())
            .collect();
        spde_core::stochastic::PathEnsemble {
            tg: ens.tg,
            spec: half,
            states,
            increments: None,
            seed: ens.seed,
        }
    };
    let u_eps = restrict_ens(&expansion.u_eps[0].1);
    let u = restrict_ens(&expansion.u);
    let v1 = restrict_ens(&expansion.v[0]);
    let r = restrict_ens(&expansion.r_empirical[0].1);
    let diff = u_eps.linear_combination(1.0, &u, -1.0).unwrap();
    let lhs = lp_norm_estimate(&diff, 2.0, &half_sp).unwrap();
    let rhs = eps * lp_norm_estimate(&v1, 2.0, &half_sp).unwrap()
        + lp_norm_estimate(&r, 2.0, &half_sp).unwrap();
    assert!(
        lhs <= rhs * (1.0 + 1e-9) + 1e-12,
        "triangle comparison violated: {lhs} > {rhs}"
    );
}

#[test]
fn positive_rates_stay_mostly_positive() {
    // Positivity concerns the forward curve, i.e. the half-line restriction
    // (the reflected left extension oscillates by construction).
    let half = GridSpec::half_line(24.0, 1537).unwrap();
    let full = GridSpec::new(-16.0, 24.0, 2561).unwrap();
    let restrict_ens = |ens: &spde_core::stochastic::PathEnsemble| {
        let states: Vec<Vec<GridFunction>> = ens
            .states
            .iter()
            .map(|p| p.iter().map(|g| restrict_to_halfline(g, 1.0).unwrap()).collect())
            .collect();
        spde_core::stochastic::PathEnsemble {
            tg: ens.tg,
            spec: half,
            states,
            increments: None,
            seed: ens.seed,
        }
    };
    // Strongly positive initial curve, small vol.
    let u0 = AnalyticCurve::step(1.0, 1.0, 0.5, 1.0).to_grid(half);
    let sigmas = vec![AnalyticCurve::bump(1.0, 1.2, 0.02).to_grid(half)];
    let model = HJMModel::new(sigmas, u0, 1, 1.0, 13).unwrap();
    let ext = ExtensionOperator::new(half, full, 1.0, 2).unwrap();
    let tg = TimeGrid::new(1.0, 16).unwrap();
    let ps = musiela_problem(&model, &ext, tg, 16).unwrap();
    let ens = restrict_ens(&solve_mild(&ps, 0.0, ps.seed).unwrap());
    let frac = spde_core::musiela::positivity_fraction(&ens);
    assert!(frac > 0.999, "positive model lost positivity: {frac}");

    // Zero-mean pure-noise model: strictly below one.
    let zero_u0 = GridFunction::zero(half);
    let sigmas = vec![AnalyticCurve::bump(1.0, 1.2, 0.3).to_grid(half)];
    let model = HJMModel::new(sigmas, zero_u0, 1, 1.0, 13).unwrap();
    let mut ps = musiela_problem(&model, &ext, tg, 16).unwrap();
    ps.alpha = spde_core::expansion::DriftCurve::Zero;
    let ens = restrict_ens(&solve_mild(&ps, 0.0, ps.seed).unwrap());
    let frac = spde_core::musiela::positivity_fraction(&ens);
    assert!(frac < 1.0, "pure-noise model cannot be almost surely nonnegative");
}

#[test]
fn hjm_drift_feeds_admissible_problem() {
    // The assembled extended problem passes its own validation.
    let half = GridSpec::half_line(24.0, 1537).unwrap();
    let full = GridSpec::new(-16.0, 24.0, 2561).unwrap();
    let sigmas = vec![AnalyticCurve::bump(1.0, 1.2, 0.2).to_grid(half)];
    let u0 = AnalyticCurve::step(1.0, 1.0, 0.02, 0.01).to_grid(half);
    let model = HJMModel::new(sigmas.clone(), u0, 1, 1.0, 3).unwrap();
    let drift = hjm_drift(&model).unwrap();
    assert!(drift.limit_at_infinity.abs() < 1e-12);
    let ext = ExtensionOperator::new(half, full, 1.0, 2).unwrap();
    let ps = musiela_problem(&model, &ext, TimeGrid::new(1.0, 16).unwrap(), 2).unwrap();
    ps.validate().unwrap();
}
