//! The forward-rate application: HJM drift construction, extension of the
//! Musiela equation from the half-line space to the full line, perturbed
//! forward-rate simulation, bond pricing, the relative pricing-error
//! expansion, and martingale/arbitrage diagnostics.
//!
//! The half-line problem `du = A_0 u dt + alpha_0 dt + B_0 dW` carries the
//! no-arbitrage drift `alpha_0 = sum_k sigma_k I sigma_k`. Extending data
//! through a continuous extension operator turns the perturbed problem into
//! the full-line equation `dv = (A + eps A^2) v dt + alpha dt + B dW`, whose
//! restriction at `eps = 0` is the Musiela solution.

use crate::expansion::{
    solve_mild, DriftCurve, ExpansionResult, PreparedCurve, ProblemSpec,
};
use crate::functionals::{f_tx_parts, Trajectory};
use crate::semigroup::{GapOperator, PerturbationKind};
use crate::space::{integrate_from_zero, GridFunction, GridSpec, WeightedSpace};
use crate::stencil;
use crate::stochastic::{NoiseModel, PathEnsemble, TimeGrid};
use crate::{Result, SpdeError};
use rayon::prelude::*;

/// The half-line forward-rate model: volatility curves with
/// `sigma_k(inf) = 0`, the initial curve, the regularity order and the
/// weight.
#[derive(Debug, Clone)]
pub struct HJMModel {
    pub sigmas: Vec<GridFunction>,
    pub u0: GridFunction,
    pub m: usize,
    pub w: f64,
    pub seed: u64,
}

impl HJMModel {
    pub fn new(sigmas: Vec<GridFunction>, u0: GridFunction, m: usize, w: f64, seed: u64) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(SpdeError::Structural("HJM model needs at least one factor".into()));
        }
        let spec = u0.spec;
        if spec.x_min != 0.0 {
            return Err(SpdeError::Structural("forward curves live on the half-line grid".into()));
        }
        for (k, s) in sigmas.iter().enumerate() {
            if !s.spec.same_grid(&spec) {
                return Err(SpdeError::Structural(format!("sigma_{k} on a different grid")));
            }
            if s.limit_at_infinity.abs() > 1e-12 {
                return Err(SpdeError::Domain(format!(
                    "sigma_{k} must vanish at infinity, got {}",
                    s.limit_at_infinity
                )));
            }
        }
        Ok(Self { sigmas, u0, m, w, seed })
    }

    pub fn half_spec(&self) -> GridSpec {
        self.u0.spec
    }
}

/// The no-arbitrage drift `alpha_0 = sum_k sigma_k * I sigma_k`.
pub fn hjm_drift(model: &HJMModel) -> Result<GridFunction> {
    let mut acc = GridFunction::zero(model.half_spec());
    for sigma in &model.sigmas {
        let integral = integrate_from_zero(sigma)?;
        acc.add_scaled_mut(1.0, &sigma.mul_pointwise(&integral)?)?;
    }
    Ok(acc)
}

/// `D(A_0^m)` norm on the half-line: `(sum_{k<=m} ||A^k f||_H^2)^{1/2}` with
/// the stencil derivative table.
pub fn d_a0m_norm(f: &GridFunction, m: usize, sp: &WeightedSpace) -> Result<f64> {
    let mut acc = 0.0;
    for k in 0..=m {
        let fk = if k == 0 { f.clone() } else { f.derivative(k)? };
        let n = sp.norm(&fk)?;
        acc += n * n;
    }
    Ok(acc.sqrt())
}

/// Ratio `||f * I f||_{D(A_0^m)} / ||f||^2_{D(A_0^m)}`; the caller asserts a
/// uniform constant over a sample family.
pub fn product_estimate_check(f: &GridFunction, m: usize, sp: &WeightedSpace) -> Result<f64> {
    let denom = d_a0m_norm(f, m, sp)?;
    if denom * denom < 1e-300 {
        return Err(SpdeError::Domain("product estimate undefined for f = 0".into()));
    }
    let product = f.mul_pointwise(&integrate_from_zero(f)?)?;
    Ok(d_a0m_norm(&product, m, sp)? / (denom * denom))
}

/// Extension operator from the half-line grid to a full-line grid sharing
/// `dx`: `g = f' e^{w y / 2}` is reflected with Hestenes coefficients
/// (`g(-y) = sum_i c_i g(y / i)` matching derivatives up to order `2m`),
/// damped back by `e^{-w y / 2}` and re-integrated; the restriction to the
/// half-line reproduces `f` exactly.
pub struct ExtensionOperator {
    pub half_spec: GridSpec,
    pub full_spec: GridSpec,
    pub w: f64,
    pub order: usize,
    coefficients: Vec<f64>,
    zero_idx: usize,
}

impl ExtensionOperator {
    /// `order` is the matched derivative order `2m`; the reflection uses
    /// `2m + 1` terms.
    pub fn new(half_spec: GridSpec, full_spec: GridSpec, w: f64, order: usize) -> Result<Self> {
        if half_spec.x_min != 0.0 {
            return Err(SpdeError::Structural("extension source must be a half-line grid".into()));
        }
        if (full_spec.dx - half_spec.dx).abs() > 1e-12 * half_spec.dx
            || (full_spec.x_max - half_spec.x_max).abs() > 1e-9
        {
            return Err(SpdeError::Structural(
                "full-line grid must share dx and x_max with the half-line grid".into(),
            ));
        }
        let zero_idx = full_spec
            .index_of(0.0)
            .ok_or_else(|| SpdeError::Structural("full grid does not contain 0".into()))?;
        if full_spec.x_min.abs() > half_spec.x_max {
            return Err(SpdeError::Structural(
                "reflection needs |x_min| <= x_max so the sources stay on the half-line".into(),
            ));
        }
        let n_terms = order + 1;
        // Vandermonde system sum_i c_i (-1/i)^j = 1, j = 0..order.
        let nodes: Vec<f64> = (1..=n_terms).map(|i| -1.0 / i as f64).collect();
        let mut a = vec![vec![0.0; n_terms]; n_terms];
        let mut rhs = vec![1.0; n_terms];
        for (j, row) in a.iter_mut().enumerate() {
            for (i, node) in nodes.iter().enumerate() {
                row[i] = node.powi(j as i32);
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..n_terms {
            let mut pivot = col;
            for r in col + 1..n_terms {
                if a[r][col].abs() > a[pivot][col].abs() {
                    pivot = r;
                }
            }
            a.swap(col, pivot);
            rhs.swap(col, pivot);
            let d = a[col][col];
            if d.abs() < 1e-300 {
                return Err(SpdeError::Numeric("singular reflection system".into()));
            }
            for r in col + 1..n_terms {
                let factor = a[r][col] / d;
                for c in col..n_terms {
                    a[r][c] -= factor * a[col][c];
                }
                rhs[r] -= factor * rhs[col];
            }
        }
        let mut coefficients = vec![0.0; n_terms];
        for r in (0..n_terms).rev() {
            let mut acc = rhs[r];
            for c in r + 1..n_terms {
                acc -= a[r][c] * coefficients[c];
            }
            coefficients[r] = acc / a[r][r];
        }
        Ok(Self { half_spec, full_spec, w, order, coefficients, zero_idx })
    }

    /// Extend a half-line curve; values on the half-line are copied, so the
    /// restriction identity holds exactly on shared grid points.
    pub fn extend(&self, f: &GridFunction) -> Result<GridFunction> {
        if !f.spec.same_grid(&self.half_spec) {
            return Err(SpdeError::Structural("curve does not live on the extension source grid".into()));
        }
        let df = f.derivative(1)?;
        if !df.is_finite() {
            return Err(SpdeError::Domain("extension input lacks the required smoothness".into()));
        }
        let half = self.half_spec;
        // g(y) = f'(y) e^{w y / 2} on the half-line.
        let g: Vec<f64> = (0..half.n)
            .map(|i| df.values[i] * (self.w * half.x(i) / 2.0).exp())
            .collect();
        // Reflected samples on the left part of the full grid, then the
        // damped derivative h(x) = e^{-w x / 2} g_ext(x).
        let full = self.full_spec;
        let mut h_left = vec![0.0; self.zero_idx + 1];
        for (j, h) in h_left.iter_mut().enumerate() {
            let x = full.x(j); // x <= 0
            let y = -x;
            let mut acc = 0.0;
            for (i, c) in self.coefficients.iter().enumerate() {
                let arg = y / (i + 1) as f64 / half.dx; // grid coordinates
                acc += c * stencil::interpolate_quintic(&g, arg);
            }
            *h = acc * (-self.w * x / 2.0).exp();
        }
        // Left values by integration anchored at f(0).
        let cum = stencil::cumulative_integral(&h_left, full.dx, self.zero_idx);
        let mut values = Vec::with_capacity(full.n);
        for j in 0..self.zero_idx {
            values.push(f.values[0] + cum[j]);
        }
        values.extend_from_slice(&f.values);
        GridFunction::new(full, values, f.limit_at_infinity)
    }
}

/// Assemble the extended full-line problem for the (possibly perturbed)
/// forward-rate equation: `v0 = L u0`, `alpha = L alpha_0`, extended
/// volatilities, plain `A^2` perturbation.
pub fn musiela_problem(
    model: &HJMModel,
    ext: &ExtensionOperator,
    tg: TimeGrid,
    n_paths: usize,
) -> Result<ProblemSpec> {
    let sp = WeightedSpace::new(model.w, ext.full_spec)?;
    let alpha0 = hjm_drift(model)?;
    let alpha = ext.extend(&alpha0)?;
    let u0 = ext.extend(&model.u0)?;
    let sigmas: Vec<GridFunction> = model
        .sigmas
        .iter()
        .map(|s| ext.extend(s))
        .collect::<Result<Vec<_>>>()?;
    let noise = NoiseModel::new(sigmas, model.seed, &sp)?;
    Ok(ProblemSpec {
        u0: PreparedCurve::from_grid(u0),
        alpha: DriftCurve::constant_in_time(PreparedCurve::from_grid(alpha), tg.n_steps),
        noise: Some(crate::expansion::NoiseSpec::from_model(noise)),
        m: model.m,
        p: 2.0,
        tg,
        sp,
        kind: PerturbationKind::SecondDerivative,
        n_paths,
        seed: model.seed,
        check_left_decay: false,
    })
}

/// Simulate the perturbed forward rates on the full line; the restriction
/// of the `eps = 0` run to the half-line is the Musiela solution.
pub fn simulate_forward_rates(
    model: &HJMModel,
    ext: &ExtensionOperator,
    eps: f64,
    tg: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let ps = musiela_problem(model, ext, tg, n_paths)?;
    solve_mild(&ps, eps, seed)
}

/// Discounted and undiscounted zero-coupon bond prices off one trajectory:
/// `B_hat = exp(-int_0^x v(t, y) dy)`, `B = B_hat / beta(t)` with
/// `beta(t) = exp(int_0^t v(s, 0) ds)`.
pub fn bond_price(traj: &Trajectory, tg: TimeGrid, t: f64, x: f64) -> Result<(f64, f64)> {
    let (space_int, time_int) = f_tx_parts(traj, tg, t, x)?;
    let undiscounted = (-space_int).exp();
    let discounted = (-space_int - time_int).exp();
    Ok((discounted, undiscounted))
}

/// Discounted bond prices per path on a maturity sub-grid, with the money
/// market factors.
#[derive(Debug, Clone)]
pub struct BondSurface {
    pub times: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `prices[path][time][maturity]`, discounted.
    pub prices: Vec<Vec<Vec<f64>>>,
    /// `betas[path][time]`.
    pub betas: Vec<Vec<f64>>,
}

impl BondSurface {
    pub fn from_ensemble(ens: &PathEnsemble, maturities: &[f64]) -> Result<Self> {
        let tg = ens.tg;
        let times: Vec<f64> = (0..=tg.n_steps).map(|j| tg.time(j)).collect();
        let mut prices = Vec::with_capacity(ens.n_paths());
        let mut betas = Vec::with_capacity(ens.n_paths());
        for path in &ens.states {
            let mut rows = Vec::with_capacity(times.len());
            let mut beta_row = Vec::with_capacity(times.len());
            for (j, &t) in times.iter().enumerate() {
                let mut row = Vec::with_capacity(maturities.len());
                for &x in maturities {
                    let (discounted, _) = bond_price(path, tg, t, x)?;
                    if !(discounted > 0.0) {
                        return Err(SpdeError::Numeric("bond price not positive".into()));
                    }
                    row.push(discounted);
                }
                let (_, time_int) = f_tx_parts(path, tg, t, maturities[0])?;
                beta_row.push(time_int.exp());
                let _ = j;
                rows.push(row);
            }
            prices.push(rows);
            betas.push(beta_row);
        }
        Ok(Self { times, maturities: maturities.to_vec(), prices, betas })
    }

    /// Mean and standard deviation of the discounted price over paths.
    pub fn mean_sd(&self, time_idx: usize, mat_idx: usize) -> (f64, f64) {
        let n = self.prices.len() as f64;
        let mut mean = 0.0;
        for p in &self.prices {
            mean += p[time_idx][mat_idx];
        }
        mean /= n;
        let mut var = 0.0;
        for p in &self.prices {
            var += (p[time_idx][mat_idx] - mean).powi(2);
        }
        (mean, (var / n.max(2.0)).sqrt())
    }
}

/// `J_{m-1}(x) = sum_{j=1}^{m-1} (-1)^j x^j / j!`.
pub fn j_poly(m: usize, x: f64) -> f64 {
    let mut acc = 0.0;
    let mut term = 1.0;
    for j in 1..m {
        term *= -x / j as f64;
        acc += term;
    }
    acc
}

/// The exact Taylor tail `r_m(x) = e^{-x} - 1 - J_{m-1}(x)`.
pub fn r_tail(m: usize, x: f64) -> f64 {
    (-x).exp() - 1.0 - j_poly(m, x)
}

/// The relative pricing-error expansion at a fixed `(t, x)`.
#[derive(Debug, Clone)]
pub struct PricingErrorReport {
    pub t: f64,
    pub x: f64,
    /// Epsilon-power-grouped coefficients per path: `terms[n-1][path]` is
    /// the coefficient of `eps^n / n!` of `(B_eps - B)/B`.
    pub terms: Vec<Vec<f64>>,
    /// Per epsilon: mean absolute residual after subtracting the grouped
    /// terms (the `o(eps^{m-1})` tail), in `L^1` over paths.
    pub residual_l1: Vec<(f64, f64)>,
    /// Log-log slope of the residual against eps.
    pub residual_slope: Option<f64>,
    /// Empirical exponential moment `E exp(-p' (F v_eps - F v))` per eps,
    /// reported (not asserted) as the integrability diagnostic.
    pub exp_moment: Vec<(f64, f64)>,
}

/// Expand the relative pricing error
/// `(B_eps - B)/B = J_{m-1}(Delta) + r_m(Delta)`,
/// `Delta = F_{t,x} v_eps - F_{t,x} v`, grouping by powers of eps through
/// the linear expansion of `Delta`.
pub fn pricing_error_expansion(
    expansion: &ExpansionResult,
    eps_list: &[f64],
    t: f64,
    x: f64,
    m: usize,
    p_conjugate: f64,
) -> Result<PricingErrorReport> {
    let tg = expansion.u.tg;
    let n_paths = expansion.u.n_paths();
    if expansion.v.len() + 1 < m {
        return Err(SpdeError::Structural(format!(
            "expansion carries v_1..v_{}, pricing error needs order m = {m}",
            expansion.v.len()
        )));
    }
    // Per path: b_k = F_{t,x} v_k, and the grouped coefficients w_n of
    // e^{-Delta} - 1 by the scalar composition rule.
    let mut terms = vec![vec![0.0; n_paths]; m - 1];
    for path in 0..n_paths {
        let mut scaled_b = Vec::with_capacity(m - 1);
        let mut factorial = 1.0;
        for k in 1..m {
            factorial *= k as f64;
            let b_k = crate::functionals::f_tx(&expansion.v[k - 1].states[path], tg, t, x)?;
            scaled_b.push(b_k / factorial);
        }
        for n in 1..m {
            terms[n - 1][path] = crate::functionals::faa_di_bruno_generic(
                n,
                &scaled_b,
                |j, args: &[&f64]| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * args.iter().copied().product::<f64>()
                },
            );
        }
    }

    let mut residual_l1 = Vec::with_capacity(eps_list.len());
    let mut exp_moment = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let u_eps = expansion
            .u_eps
            .iter()
            .find(|(e, _)| (*e - eps).abs() < 1e-15)
            .map(|(_, ens)| ens)
            .ok_or_else(|| {
                SpdeError::Structural(format!("expansion does not contain eps = {eps}"))
            })?;
        let mut acc = 0.0;
        let mut moment = 0.0;
        for path in 0..n_paths {
            let delta = crate::functionals::f_tx(&u_eps.states[path], tg, t, x)?
                - crate::functionals::f_tx(&expansion.u.states[path], tg, t, x)?;
            let rel_error = (-delta).exp() - 1.0;
            let mut resid = rel_error;
            let mut factorial = 1.0;
            for n in 1..m {
                factorial *= n as f64;
                resid -= eps.powi(n as i32) / factorial * terms[n - 1][path];
            }
            acc += resid.abs();
            moment += (-p_conjugate * delta).exp();
        }
        residual_l1.push((eps, acc / n_paths as f64));
        exp_moment.push((eps, moment / n_paths as f64));
    }
    let residual_slope = {
        let eps: Vec<f64> = residual_l1.iter().map(|(e, _)| *e).collect();
        let norms: Vec<f64> = residual_l1.iter().map(|(_, r)| *r).collect();
        crate::expansion::fit_loglog_slope(&eps, &norms).ok()
    };
    Ok(PricingErrorReport { t, x, terms, residual_l1, residual_slope, exp_moment })
}

/// Arbitrage diagnostic at a fixed time-to-maturity `x0`: drift of the mean
/// discounted bond price over time and the Monte Carlo band.
#[derive(Debug, Clone)]
pub struct MartingaleDiagnostic {
    /// `max_t |mean B(t, x0) - mean B(0, x0)|`.
    pub drift_estimate: f64,
    /// Three MC standard errors (the largest over times).
    pub ci: f64,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Streaming martingale check: with the no-arbitrage drift installed and
/// `eps = 0` the mean discounted price stays flat within the band; a
/// positive `eps` introduces a drift.
pub fn martingale_diagnostic(
    model: &HJMModel,
    ext: &ExtensionOperator,
    eps: f64,
    tg: TimeGrid,
    n_paths: usize,
    x0: f64,
) -> Result<MartingaleDiagnostic> {
    let mut ps = musiela_problem(model, ext, tg, n_paths)?;
    ps.n_paths = n_paths;
    let incs = ps.increments(ps.seed);
    let step_op = GapOperator::new(ps.sp.spec, tg.dt(), eps, ps.kind, ps.sp.w)?;
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|path| -> Result<(Vec<f64>, Vec<f64>)> {
            let traj = crate::expansion::mild_path(&ps, &step_op, &incs, path)?;
            let mut prices = Vec::with_capacity(tg.n_steps + 1);
            let mut squares = Vec::with_capacity(tg.n_steps + 1);
            for j in 0..=tg.n_steps {
                let (discounted, _) = bond_price(&traj, tg, tg.time(j), x0)?;
                prices.push(discounted);
                squares.push(discounted * discounted);
            }
            Ok((prices, squares))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = n_paths as f64;
    let mut means = vec![0.0; tg.n_steps + 1];
    let mut second = vec![0.0; tg.n_steps + 1];
    for (prices, squares) in &sums {
        for j in 0..=tg.n_steps {
            means[j] += prices[j];
            second[j] += squares[j];
        }
    }
    let mut std_errors = Vec::with_capacity(tg.n_steps + 1);
    for j in 0..=tg.n_steps {
        means[j] /= n;
        let var = (second[j] / n - means[j] * means[j]).max(0.0);
        std_errors.push((var / n).sqrt());
    }
    let drift_estimate = means
        .iter()
        .map(|m| (m - means[0]).abs())
        .fold(0.0_f64, f64::max);
    let ci = 3.0 * std_errors.iter().fold(0.0_f64, |a, b| a.max(*b));
    Ok(MartingaleDiagnostic { drift_estimate, ci, means, std_errors })
}

/// Fraction of `(path, time, point)` samples with `v >= -1e-10`; decides
/// whether the sign-based remainder bound applies.
pub fn positivity_fraction(ens: &PathEnsemble) -> f64 {
    let mut total = 0usize;
    let mut nonneg = 0usize;
    for path in &ens.states {
        for state in path {
            for v in &state.values {
                total += 1;
                if *v >= -1e-10 {
                    nonneg += 1;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        nonneg as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::AnalyticCurve;
    use crate::expansion::expand;
    use crate::space::restrict_to_halfline;

    fn half_spec() -> GridSpec {
        GridSpec::half_line(24.0, 1537).unwrap() // dx = 1/64
    }

    fn full_spec() -> GridSpec {
        GridSpec::new(-16.0, 24.0, 2561).unwrap()
    }

    fn reference_model(m: usize) -> HJMModel {
        let spec = half_spec();
        let sigmas = vec![
            AnalyticCurve::bump(1.0, 1.2, 0.2).to_grid(spec),
            AnalyticCurve::bump(3.0, 1.5, 0.15).to_grid(spec),
        ];
        let u0 = AnalyticCurve::step(1.0, 1.0, 0.02, 0.01).to_grid(spec);
        HJMModel::new(sigmas, u0, m, 1.0, 7).unwrap()
    }

    #[test]
    fn hjm_drift_examples() {
        let spec = half_spec();
        let zero_model = HJMModel::new(
            vec![GridFunction::zero(spec)],
            GridFunction::zero(spec),
            1,
            1.0,
            1,
        )
        .unwrap();
        let drift = hjm_drift(&zero_model).unwrap();
        assert!(drift.values.iter().all(|v| *v == 0.0));

        // Single factor sigma = e^{-x}: alpha_0 = e^{-x} (1 - e^{-x}).
        let sigma = GridFunction::from_fn(spec, |x| (-x).exp(), 0.0);
        let model = HJMModel::new(vec![sigma], GridFunction::zero(spec), 1, 1.0, 1).unwrap();
        let drift = hjm_drift(&model).unwrap();
        let mut worst = 0.0_f64;
        for (i, x) in spec.xs().enumerate() {
            let expect = (-x).exp() * (1.0 - (-x).exp());
            worst = worst.max((drift.values[i] - expect).abs());
        }
        assert!(worst < 1e-6, "single-factor drift error {worst}");

        // Two factors: drift adds exactly.
        let s1 = AnalyticCurve::bump(1.0, 1.0, 0.3).to_grid(spec);
        let s2 = AnalyticCurve::bump(2.0, 1.5, 0.2).to_grid(spec);
        let m1 = HJMModel::new(vec![s1.clone()], GridFunction::zero(spec), 1, 1.0, 1).unwrap();
        let m2 = HJMModel::new(vec![s2.clone()], GridFunction::zero(spec), 1, 1.0, 1).unwrap();
        let m12 = HJMModel::new(vec![s1, s2], GridFunction::zero(spec), 1, 1.0, 1).unwrap();
        let sum = hjm_drift(&m1).unwrap().add(&hjm_drift(&m2).unwrap()).unwrap();
        assert!(hjm_drift(&m12).unwrap().max_abs_diff(&sum) < 1e-15);
    }

    #[test]
    fn product_estimate_is_scale_invariant_and_stable() {
        let spec = half_spec();
        let sp = WeightedSpace::new(1.0, spec).unwrap();
        let f = GridFunction::from_fn(spec, |x| (-x).exp(), 0.0);
        let r1 = product_estimate_check(&f, 1, &sp).unwrap();
        assert!(r1.is_finite() && r1 > 0.0);
        // Homogeneity: degree 2 over degree 2.
        let r_scaled = product_estimate_check(&f.scaled(3.0), 1, &sp).unwrap();
        assert!((r1 - r_scaled).abs() < 1e-10 * r1);
        // Stable under refinement.
        let fine = GridSpec::half_line(24.0, 3073).unwrap();
        let sp_fine = WeightedSpace::new(1.0, fine).unwrap();
        let f_fine = GridFunction::from_fn(fine, |x| (-x).exp(), 0.0);
        let r_fine = product_estimate_check(&f_fine, 1, &sp_fine).unwrap();
        assert!((r1 - r_fine).abs() < 0.02 * r1, "{r1} vs {r_fine}");
        // Degenerate input rejected.
        assert!(product_estimate_check(&GridFunction::zero(spec), 1, &sp).is_err());
    }

    #[test]
    fn extension_restriction_identity_and_constants() {
        let ext = ExtensionOperator::new(half_spec(), full_spec(), 1.0, 4).unwrap();
        let c = GridFunction::constant(half_spec(), 2.5);
        let lc = ext.extend(&c).unwrap();
        assert!(lc.values.iter().all(|v| (*v - 2.5).abs() < 1e-10));

        let f = GridFunction::from_fn(half_spec(), |x| (-x).exp() + 1.0, 1.0);
        let lf = ext.extend(&f).unwrap();
        let back = restrict_to_halfline(&lf, 1.0).unwrap();
        assert_eq!(back.max_abs_diff(&f), 0.0, "restriction is an exact copy");
        assert_eq!(lf.limit_at_infinity, f.limit_at_infinity);
    }

    #[test]
    fn extension_norm_ratios_stable_across_suite() {
        let m = 1usize;
        let coarse_half = GridSpec::half_line(24.0, 769).unwrap();
        let coarse_full = GridSpec::new(-16.0, 24.0, 1281).unwrap();
        let fine_half = GridSpec::half_line(24.0, 1537).unwrap();
        let fine_full = GridSpec::new(-16.0, 24.0, 2561).unwrap();
        let curves = crate::samples::sample_curves();
        for curve in curves {
            let mut ratios = Vec::new();
            for (hs, fs) in [(coarse_half, coarse_full), (fine_half, fine_full)] {
                let ext = ExtensionOperator::new(hs, fs, 1.0, 2 * m).unwrap();
                let f = curve.to_grid(hs);
                let sp_half = WeightedSpace::new(1.0, hs).unwrap();
                let denom = d_a0m_norm(&f, 2 * m, &sp_half).unwrap();
                if denom < 1e-12 {
                    continue;
                }
                let lf = ext.extend(&f).unwrap();
                let sp_full = WeightedSpace::new(1.0, fs).unwrap();
                let num = d_a0m_norm(&lf, 2 * m, &sp_full).unwrap();
                ratios.push(num / denom);
            }
            if ratios.len() == 2 {
                let rel = (ratios[0] - ratios[1]).abs() / ratios[1];
                assert!(rel < 0.2, "extension ratio unstable: {ratios:?}");
            }
        }
    }

    #[test]
    fn restricted_simulation_matches_halfline_transport() {
        // eps = 0 and common noise: the restriction of the full-line run
        // equals a direct half-line simulation with the shift semigroup.
        let model = reference_model(1);
        let ext = ExtensionOperator::new(half_spec(), full_spec(), 1.0, 2).unwrap();
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let n_paths = 4;
        let ens = simulate_forward_rates(&model, &ext, 0.0, tg, n_paths, model.seed).unwrap();

        // Direct half-line oracle.
        let alpha0 = hjm_drift(&model).unwrap();
        let incs = crate::stochastic::sample_wiener_increments(2, tg, n_paths, model.seed);
        let dt = tg.dt();
        for path in 0..n_paths {
            let mut u = model.u0.clone();
            for j in 0..tg.n_steps {
                let mut inner = u.clone();
                inner.add_scaled_mut(dt, &alpha0).unwrap();
                for f in 0..2 {
                    inner
                        .add_scaled_mut(incs.get(path, j, f), &model.sigmas[f])
                        .unwrap();
                }
                u = crate::semigroup::shift_apply(&inner, dt).unwrap();
                let restricted =
                    restrict_to_halfline(&ens.states[path][j + 1], 1.0).unwrap();
                let err = restricted.max_abs_diff(&u);
                assert!(err < 1e-11, "path {path}, step {j}: mismatch {err}");
            }
        }
    }

    #[test]
    fn bond_price_examples() {
        let spec = half_spec();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let zero: Vec<GridFunction> = (0..=8).map(|_| GridFunction::zero(spec)).collect();
        let (b, b_hat) = bond_price(&zero, tg, 0.5, 2.0).unwrap();
        assert_eq!((b, b_hat), (1.0, 1.0));

        // Flat curve r: B(t, x) = e^{-r (x + t)}.
        let r = 0.03;
        let flat: Vec<GridFunction> =
            (0..=8).map(|_| GridFunction::constant(spec, r)).collect();
        let (b, b_hat) = bond_price(&flat, tg, 0.5, 2.0).unwrap();
        assert!((b - (-r * 2.5_f64).exp()).abs() < 1e-12);
        assert!((b_hat - (-r * 2.0_f64).exp()).abs() < 1e-12);

        // Static v(t, y) = e^{-y}: B_hat = exp(-(1 - e^{-x})).
        let fine = GridSpec::half_line(24.0, 11521).unwrap();
        let traj: Vec<GridFunction> = (0..=8)
            .map(|_| GridFunction::from_fn(fine, |y| (-y).exp(), 0.0))
            .collect();
        let (_, b_hat) = bond_price(&traj, tg, 0.0, 3.0).unwrap();
        let expect = (-(1.0 - (-3.0_f64).exp())).exp();
        assert!((b_hat - expect).abs() < 1e-6, "{b_hat} vs {expect}");
    }

    #[test]
    fn scalar_taylor_identity_exact() {
        // e^{-x} = 1 + J_{m-1}(x) + r_m(x) for random x, all m <= 6.
        let mut state = 0x12345u64;
        for m in 1..=6usize {
            for _ in 0..50 {
                state = crate::stochastic::mix64(state);
                let x = 4.0 * crate::stochastic::unit_from(state) - 2.0;
                let lhs = (-x).exp();
                let rhs = 1.0 + j_poly(m, x) + r_tail(m, x);
                assert!(
                    (lhs - rhs).abs() <= 4.0 * f64::EPSILON * lhs.abs().max(1.0),
                    "identity broken at m = {m}, x = {x}"
                );
            }
        }
    }

    #[test]
    fn positivity_fraction_examples() {
        let spec = half_spec();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let zero = PathEnsemble {
            tg,
            spec,
            states: vec![vec![GridFunction::zero(spec); 3]; 2],
            increments: None,
            seed: 0,
        };
        assert_eq!(positivity_fraction(&zero), 1.0);

        let mixed = PathEnsemble {
            tg,
            spec,
            states: vec![vec![
                GridFunction::from_fn(spec, |x| if x < 1.0 { -1.0 } else { 1.0 }, 1.0);
                3
            ]],
            increments: None,
            seed: 0,
        };
        let frac = positivity_fraction(&mixed);
        assert!(frac < 1.0 && frac > 0.5);
    }

    #[test]
    fn pricing_error_identity_and_eps_zero() {
        let model = reference_model(2);
        let ext = ExtensionOperator::new(half_spec(), full_spec(), 1.0, 4).unwrap();
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let ps = musiela_problem(&model, &ext, tg, 8).unwrap();
        let eps_list = [0.0, 0.125];
        let expansion = expand(&ps, &eps_list, false).unwrap();
        let report =
            pricing_error_expansion(&expansion, &eps_list, 1.0, 1.0, 2, 2.0).unwrap();
        // eps = 0: Delta = 0 and the residual vanishes identically.
        let (e0, r0) = report.residual_l1[0];
        assert_eq!(e0, 0.0);
        assert!(r0 < 1e-14, "eps = 0 residual {r0}");
    }

    #[test]
    fn martingale_flat_for_trivial_model() {
        let spec = half_spec();
        let model = HJMModel::new(
            vec![GridFunction::zero(spec)],
            GridFunction::zero(spec),
            1,
            1.0,
            3,
        )
        .unwrap();
        let ext = ExtensionOperator::new(half_spec(), full_spec(), 1.0, 2).unwrap();
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let diag = martingale_diagnostic(&model, &ext, 0.0, tg, 16, 1.0).unwrap();
        assert!(diag.drift_estimate < 1e-12, "B should be identically 1");
        assert!(diag.means.iter().all(|m| (m - 1.0).abs() < 1e-12));
    }
}
