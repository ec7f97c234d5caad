//! Deterministic sample suites of admissible curves.
//!
//! Several structural checks measure a constant once on a fixed family
//! (embedding constants, extension-operator norm ratios, product estimates)
//! and then assert it across the same family; everything here is seeded and
//! reproducible.

use crate::curves::AnalyticCurve;
use crate::space::{GridFunction, GridSpec, WeightedSpace};
use crate::stochastic::{mix64, unit_from};

fn uniform(seed: u64, counter: &mut u64, lo: f64, hi: f64) -> f64 {
    *counter += 1;
    lo + (hi - lo) * unit_from(mix64(seed ^ counter.wrapping_mul(0x9e3779b97f4a7c15)))
}

/// The fixed structural sample suite on a grid: constants, steps, bumps and
/// mixtures, all satisfying the truncation admissibility for the weight `w`.
pub fn sample_suite(spec: GridSpec, w: f64) -> Vec<GridFunction> {
    let curves = sample_curves();
    let space = WeightedSpace { w, spec };
    curves
        .into_iter()
        .map(|c| {
            let f = c.to_grid(spec);
            debug_assert!(space.check_admissible(&f).is_ok());
            f
        })
        .collect()
}

/// The analytic curves behind [`sample_suite`].
pub fn sample_curves() -> Vec<AnalyticCurve> {
    let mut suite = vec![
        AnalyticCurve::constant(0.0),
        AnalyticCurve::constant(1.0),
        AnalyticCurve::step(1.0, 1.0, 1.0, 0.0),
        AnalyticCurve::step(0.0, 2.0, -0.6, 0.5),
        AnalyticCurve::bump(2.0, 1.2, 0.8),
        AnalyticCurve::bump(-1.0, 0.8, -0.4),
        AnalyticCurve::bump(4.0, 2.0, 0.3),
    ];
    // Mixtures.
    let mut shapes = AnalyticCurve::step(0.5, 1.5, 0.7, 0.2).shapes;
    shapes.extend(AnalyticCurve::bump(3.0, 1.0, -0.35).shapes);
    suite.push(AnalyticCurve::new(shapes));
    let mut shapes = AnalyticCurve::bump(0.0, 1.0, 0.5).shapes;
    shapes.extend(AnalyticCurve::bump(1.5, 0.7, 0.25).shapes);
    shapes.extend(AnalyticCurve::constant(-0.3).shapes);
    suite.push(AnalyticCurve::new(shapes));
    suite
}

/// Seeded randomized curves for property-style tests: sums of one to three
/// bumps plus an optional constant, with parameters kept inside the
/// admissible window of the default grids.
pub fn randomized_curves(seed: u64, count: usize) -> Vec<AnalyticCurve> {
    let mut out = Vec::with_capacity(count);
    let mut counter = 0u64;
    for i in 0..count {
        let s = seed.wrapping_add(i as u64);
        let n_bumps = 1 + (mix64(s) % 3) as usize;
        let mut shapes = Vec::new();
        for _ in 0..n_bumps {
            let center = uniform(s, &mut counter, -1.5, 5.0);
            let width = uniform(s, &mut counter, 0.7, 2.5);
            let amp = uniform(s, &mut counter, -1.5, 1.5);
            shapes.extend(AnalyticCurve::bump(center, width, amp).shapes);
        }
        if mix64(s ^ 0xabcd) % 2 == 0 {
            let c = uniform(s, &mut counter, -1.0, 1.0);
            shapes.extend(AnalyticCurve::constant(c).shapes);
        }
        out.push(AnalyticCurve::new(shapes));
    }
    out
}
