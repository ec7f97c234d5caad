//! Expansion of functionals of the solution:
//! `F(u_eps) = F(u) + sum_n eps^n w_n / n! + R`, with the coefficients
//!
//! `w_n = sum_j sum_{k_1+..+k_n=j, k_1+2k_2+..+n k_n=n}
//!        n!/(k_1!..k_n!) D^j F(u)((v_1/1!)^{k_1}, .., (v_n/n!)^{k_n})`,
//!
//! plus the concrete linear map
//! `F_{t,x} f = int_0^x f(t,y) dy + int_0^t f(s,0) ds` used for bond prices.

use crate::expansion::ExpansionResult;
use crate::space::GridFunction;
use crate::stochastic::TimeGrid;
use crate::{Result, SpdeError};

/// One path of a process: the per-step curves.
pub type Trajectory = [GridFunction];

/// A functional of trajectories with user-supplied multilinear derivative
/// evaluators up to some order; the codomain is a scalar per path.
pub trait DifferentiableFunctional {
    /// `F(f)`.
    fn eval(&self, traj: &Trajectory) -> f64;
    /// `D^j F(base)(dirs[0], .., dirs[j-1])`, multilinear in the directions.
    fn derivative(&self, base: &Trajectory, dirs: &[&Trajectory]) -> f64;
    /// Largest derivative order the evaluator supports.
    fn max_order(&self) -> usize;
}

/// The integer vectors `(k_1, .., k_n)` with `sum k_i = j` and
/// `sum i k_i = n`, enumerated per derivative order `j`.
pub fn partitions(n: usize, j: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    // Fill positions from the largest part down; remaining weight and count
    // pin the tail.
    fn recurse(
        pos: usize,
        weight_left: usize,
        count_left: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if pos == 0 {
            if weight_left == 0 && count_left == 0 {
                out.push(current.clone());
            }
            return;
        }
        let max_k = (weight_left / pos).min(count_left);
        for k in 0..=max_k {
            current[pos - 1] = k;
            recurse(pos - 1, weight_left - k * pos, count_left - k, current, out);
        }
        current[pos - 1] = 0;
    }
    recurse(n, n, j, &mut current, &mut out);
    out
}

/// Generic Faa di Bruno coefficient: the `derivative` closure evaluates
/// `D^j F(u)(args)`; `scaled_v[i]` must hold `v_{i+1} / (i+1)!`.
pub fn faa_di_bruno_generic<V>(
    n: usize,
    scaled_v: &[V],
    mut derivative: impl FnMut(usize, &[&V]) -> f64,
) -> f64 {
    assert!(scaled_v.len() >= n, "need v_1..v_n");
    let mut acc = 0.0;
    for j in 1..=n {
        for part in partitions(n, j) {
            let mut multiplicity = 1.0;
            let mut args: Vec<&V> = Vec::with_capacity(j);
            for (i, &k_i) in part.iter().enumerate() {
                for _ in 0..k_i {
                    args.push(&scaled_v[i]);
                }
                let mut fact = 1.0;
                for l in 1..=k_i {
                    fact *= l as f64;
                }
                multiplicity *= fact;
                let _ = i;
            }
            let mut n_fact = 1.0;
            for l in 1..=n {
                n_fact *= l as f64;
            }
            acc += n_fact / multiplicity * derivative(j, &args);
        }
    }
    acc
}

/// `w_n` for a trajectory functional on one path: `u` is the base path and
/// `v[k-1]` the k-th coefficient path.
pub fn faa_di_bruno_wn(
    n: usize,
    functional: &dyn DifferentiableFunctional,
    u: &Trajectory,
    v: &[Vec<GridFunction>],
) -> Result<f64> {
    if n > functional.max_order() {
        return Err(SpdeError::Unsupported(format!(
            "functional provides derivatives up to order {}, needed {n}",
            functional.max_order()
        )));
    }
    if v.len() < n {
        return Err(SpdeError::Structural(format!(
            "need coefficient paths v_1..v_{n}, got {}",
            v.len()
        )));
    }
    // Pre-scale v_k by 1/k!.
    let mut scaled: Vec<Vec<GridFunction>> = Vec::with_capacity(n);
    let mut factorial = 1.0;
    for (k, path) in v.iter().take(n).enumerate() {
        factorial *= (k + 1) as f64;
        scaled.push(path.iter().map(|g| g.scaled(1.0 / factorial)).collect());
    }
    Ok(faa_di_bruno_generic(n, &scaled, |j, args| {
        let dirs: Vec<&Trajectory> = args.iter().map(|a| a.as_slice()).collect();
        let _ = j;
        functional.derivative(u, &dirs)
    }))
}

/// Expansion of `F(u_eps)`: per-path coefficients `w_n` and per-epsilon
/// remainders `F(u_eps) - F(u) - sum eps^n w_n / n!`.
#[derive(Debug, Clone)]
pub struct FunctionalExpansion {
    /// `w[n-1][path]`.
    pub w: Vec<Vec<f64>>,
    /// `(eps, remainder per path)`.
    pub remainders: Vec<(f64, Vec<f64>)>,
    /// Log-log slope of the mean absolute remainder against eps.
    pub remainder_slope: Option<f64>,
}

/// Expand a functional along an already computed solution expansion.
pub fn expand_functional(
    functional: &dyn DifferentiableFunctional,
    expansion: &ExpansionResult,
    eps_list: &[f64],
) -> Result<FunctionalExpansion> {
    let n_paths = expansion.u.n_paths();
    let order = expansion.v.len();
    let mut w = vec![vec![0.0; n_paths]; order];
    for path in 0..n_paths {
        let u_path = &expansion.u.states[path];
        let v_paths: Vec<Vec<GridFunction>> =
            expansion.v.iter().map(|ens| ens.states[path].clone()).collect();
        for n in 1..=order {
            w[n - 1][path] = faa_di_bruno_wn(n, functional, u_path, &v_paths)?;
        }
    }
    let mut remainders = Vec::new();
    for &eps in eps_list {
        let u_eps = expansion
            .u_eps
            .iter()
            .find(|(e, _)| (*e - eps).abs() < 1e-15)
            .map(|(_, ens)| ens)
            .ok_or_else(|| {
                SpdeError::Structural(format!("expansion does not contain eps = {eps}"))
            })?;
        let mut rem = Vec::with_capacity(n_paths);
        for path in 0..n_paths {
            let f_eps = functional.eval(&u_eps.states[path]);
            let f_u = functional.eval(&expansion.u.states[path]);
            let mut acc = f_eps - f_u;
            let mut factorial = 1.0;
            for n in 1..=order {
                factorial *= n as f64;
                acc -= eps.powi(n as i32) / factorial * w[n - 1][path];
            }
            rem.push(acc);
        }
        remainders.push((eps, rem));
    }
    let remainder_slope = if remainders.len() >= 2 {
        let eps: Vec<f64> = remainders.iter().map(|(e, _)| *e).collect();
        let norms: Vec<f64> = remainders
            .iter()
            .map(|(_, r)| r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64)
            .collect();
        crate::expansion::fit_loglog_slope(&eps, &norms).ok()
    } else {
        None
    };
    Ok(FunctionalExpansion { w, remainders, remainder_slope })
}

/// `F_{t,x} f = int_0^x f(t, y) dy + int_0^t f(s, 0) ds`, trapezoid in both
/// variables; `t` must be a grid time and `x >= 0` a grid point.
pub fn f_tx(traj: &Trajectory, tg: TimeGrid, t: f64, x: f64) -> Result<f64> {
    let (space_int, time_int) = f_tx_parts(traj, tg, t, x)?;
    Ok(space_int + time_int)
}

/// The two components of `F_{t,x}`: the maturity integral
/// `int_0^x f(t, y) dy` and the short-rate integral `int_0^t f(s, 0) ds`
/// (bond prices discount them separately).
pub fn f_tx_parts(traj: &Trajectory, tg: TimeGrid, t: f64, x: f64) -> Result<(f64, f64)> {
    if x < 0.0 {
        return Err(SpdeError::Domain(format!("F_tx needs x >= 0, got {x}")));
    }
    let spec = traj[0].spec;
    let step = (t / tg.dt()).round() as usize;
    if (t - step as f64 * tg.dt()).abs() > 1e-9 * (1.0 + t) || step >= traj.len() {
        return Err(SpdeError::Alignment(format!("t = {t} is not on the time grid")));
    }
    let zero_idx = spec
        .index_of(0.0)
        .ok_or_else(|| SpdeError::Structural("grid does not contain x = 0".into()))?;
    let x_idx = spec
        .index_of(x)
        .ok_or_else(|| SpdeError::Alignment(format!("x = {x} is not a grid point")))?;

    // Space integral of the curve at time t over [0, x].
    let curve = &traj[step];
    let mut space_int = 0.0;
    for i in zero_idx..x_idx {
        space_int += 0.5 * spec.dx * (curve.values[i] + curve.values[i + 1]);
    }
    // Time integral of the left-boundary trace over [0, t].
    let mut time_int = 0.0;
    for j in 0..step {
        time_int += 0.5 * tg.dt() * (traj[j].values[zero_idx] + traj[j + 1].values[zero_idx]);
    }
    Ok((space_int, time_int))
}

/// The full map `(t, x) -> F_{t,x} f` on the grid: rows are time steps.
pub fn f_full(traj: &Trajectory, tg: TimeGrid) -> Result<Vec<Vec<f64>>> {
    let spec = traj[0].spec;
    let zero_idx = spec
        .index_of(0.0)
        .ok_or_else(|| SpdeError::Structural("grid does not contain x = 0".into()))?;
    let dt = tg.dt();
    let mut out = Vec::with_capacity(traj.len());
    let mut time_int = 0.0;
    for (j, curve) in traj.iter().enumerate() {
        if j > 0 {
            time_int += 0.5 * dt * (traj[j - 1].values[zero_idx] + curve.values[zero_idx]);
        }
        let mut row = Vec::with_capacity(spec.n - zero_idx);
        let mut space_int = 0.0;
        row.push(time_int);
        for i in zero_idx..spec.n - 1 {
            space_int += 0.5 * spec.dx * (curve.values[i] + curve.values[i + 1]);
            row.push(space_int + time_int);
        }
        out.push(row);
    }
    Ok(out)
}

/// The linear functional `F_{t,x}` wrapped as a [`DifferentiableFunctional`].
pub struct LinearFtx {
    pub tg: TimeGrid,
    pub t: f64,
    pub x: f64,
}

impl DifferentiableFunctional for LinearFtx {
    fn eval(&self, traj: &Trajectory) -> f64 {
        f_tx(traj, self.tg, self.t, self.x).expect("aligned evaluation")
    }

    fn derivative(&self, _base: &Trajectory, dirs: &[&Trajectory]) -> f64 {
        match dirs {
            [dir] => self.eval(dir),
            _ => 0.0,
        }
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }
}

/// `F(f) = (F_{t,x} f)^2`: the simplest genuinely nonlinear functional.
pub struct SquaredFtx(pub LinearFtx);

impl DifferentiableFunctional for SquaredFtx {
    fn eval(&self, traj: &Trajectory) -> f64 {
        let v = self.0.eval(traj);
        v * v
    }

    fn derivative(&self, base: &Trajectory, dirs: &[&Trajectory]) -> f64 {
        match dirs {
            [dir] => 2.0 * self.0.eval(base) * self.0.eval(dir),
            [a, b] => 2.0 * self.0.eval(a) * self.0.eval(b),
            _ => 0.0,
        }
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }
}

/// `F(f) = exp(-F_{t,x} f)`: the discounted-bond composite; derivatives are
/// `D^j F(u)(h_1..h_j) = (-1)^j e^{-F u} prod F h_i` since `F_{t,x}` is
/// linear.
pub struct ExpNegFtx(pub LinearFtx);

impl DifferentiableFunctional for ExpNegFtx {
    fn eval(&self, traj: &Trajectory) -> f64 {
        (-self.0.eval(traj)).exp()
    }

    fn derivative(&self, base: &Trajectory, dirs: &[&Trajectory]) -> f64 {
        let sign = if dirs.len() % 2 == 0 { 1.0 } else { -1.0 };
        let mut prod = sign * self.eval(base);
        for d in dirs {
            prod *= self.0.eval(d);
        }
        prod
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }
}
