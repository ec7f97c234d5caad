//! Reproducible Monte Carlo machinery: the finite-factor cylindrical Wiener
//! process, deterministic convolutions `S * f`, stochastic convolutions
//! `S <> C` with polynomial weights, and ensemble norms.
//!
//! Increments are counter-based: `increment(path, step, factor)` is a pure
//! function of `(seed, path, step, factor)`, so ensembles are bit-exact for
//! a fixed seed regardless of the thread count, and common random numbers
//! across the perturbation parameter come for free.

use crate::semigroup::{gap_operators, PerturbationKind};
use crate::space::{GridFunction, GridSpec, WeightedSpace};
use crate::{Result, SpdeError};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// splitmix64 finalizer; the crate-wide deterministic mixer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` from 64 bits.
pub(crate) fn unit_from(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal draw as a pure function of the counter tuple.
fn standard_normal(seed: u64, path: u64, step: u64, factor: u64) -> f64 {
    let mut s = mix64(seed);
    s = mix64(s ^ path.wrapping_mul(0xa076_1d64_78bd_642f));
    s = mix64(s ^ step.wrapping_mul(0xe703_7ed1_a0b4_28db));
    s = mix64(s ^ factor.wrapping_mul(0x8ebc_6af0_9c88_c6e3));
    // (0, 1] so the logarithm stays finite.
    let u1 = unit_from(mix64(s)) + f64::EPSILON / 2.0;
    let u2 = unit_from(mix64(s ^ 0x5851_f42d_4c95_7f2d));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || n_steps == 0 {
            return Err(SpdeError::Domain(format!(
                "time grid needs T > 0 and n_steps > 0, got T = {t_end}, n_steps = {n_steps}"
            )));
        }
        Ok(Self { t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    /// Shift slots per time step; errors unless `dt` is a whole number of
    /// grid spacings.
    pub fn slots_per_step(&self, spec: GridSpec) -> Result<usize> {
        crate::semigroup::shift_slots(spec, self.dt())
    }
}

/// Wiener increments `Delta W ~ N(0, dt)` indexed by (path, step, factor).
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    pub k_factors: usize,
    pub n_steps: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    data: Vec<f64>,
}

impl WienerIncrements {
    pub fn get(&self, path: usize, step: usize, factor: usize) -> f64 {
        self.data[(path * self.n_steps + step) * self.k_factors + factor]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Counter-based generation of all increments; any element is a pure
/// function of `(seed, path, step, factor)`.
pub fn sample_wiener_increments(
    k_factors: usize,
    tg: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> WienerIncrements {
    let dt = tg.dt();
    let sqrt_dt = dt.sqrt();
    let n_steps = tg.n_steps;
    let mut data = vec![0.0; n_paths * n_steps * k_factors];
    data.par_chunks_mut(n_steps * k_factors)
        .enumerate()
        .for_each(|(path, chunk)| {
            for step in 0..n_steps {
                for factor in 0..k_factors {
                    chunk[step * k_factors + factor] =
                        sqrt_dt * standard_normal(seed, path as u64, step as u64, factor as u64);
                }
            }
        });
    WienerIncrements { k_factors, n_steps, n_paths, dt, seed, data }
}

/// The finite-factor noise: `K` volatility curves (static or per-step) and
/// a seeding policy.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub k_factors: usize,
    sigmas: Sigmas,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Sigmas {
    Static(Vec<GridFunction>),
    TimeDependent(Vec<Vec<GridFunction>>),
}

impl NoiseModel {
    /// Checked constructor: every curve must vanish at infinity and the
    /// total squared norm must be finite.
    pub fn new(sigmas: Vec<GridFunction>, seed: u64, sp: &WeightedSpace) -> Result<Self> {
        let mut total = 0.0;
        for (k, s) in sigmas.iter().enumerate() {
            if s.limit_at_infinity.abs() > 1e-12 {
                return Err(SpdeError::Domain(format!(
                    "volatility curve {k} must vanish at infinity, got limit {}",
                    s.limit_at_infinity
                )));
            }
            let norm = sp.norm(s)?;
            total += norm * norm;
        }
        if !total.is_finite() {
            return Err(SpdeError::Numeric("total noise norm is not finite".into()));
        }
        Ok(Self { k_factors: sigmas.len(), sigmas: Sigmas::Static(sigmas), seed })
    }

    /// Test hook bypassing the vanishing-at-infinity check.
    pub fn new_unchecked(sigmas: Vec<GridFunction>, seed: u64) -> Self {
        Self { k_factors: sigmas.len(), sigmas: Sigmas::Static(sigmas), seed }
    }

    /// Time-dependent family: `sigmas[factor][step]`.
    pub fn new_time_dependent(sigmas: Vec<Vec<GridFunction>>, seed: u64) -> Result<Self> {
        let k = sigmas.len();
        if k == 0 || sigmas.iter().any(|family| family.is_empty()) {
            return Err(SpdeError::Structural("empty time-dependent noise family".into()));
        }
        Ok(Self { k_factors: k, sigmas: Sigmas::TimeDependent(sigmas), seed })
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.sigmas, Sigmas::TimeDependent(_))
    }

    pub fn sigma(&self, factor: usize, step: usize) -> &GridFunction {
        match &self.sigmas {
            Sigmas::Static(v) => &v[factor],
            Sigmas::TimeDependent(v) => {
                let family = &v[factor];
                &family[step.min(family.len() - 1)]
            }
        }
    }

    /// Apply a curve map to every factor (e.g. a generator power).
    pub fn map_curves(&self, f: impl Fn(&GridFunction) -> Result<GridFunction>) -> Result<Self> {
        let sigmas = match &self.sigmas {
            Sigmas::Static(v) => Sigmas::Static(v.iter().map(&f).collect::<Result<_>>()?),
            Sigmas::TimeDependent(v) => Sigmas::TimeDependent(
                v.iter()
                    .map(|fam| fam.iter().map(&f).collect::<Result<_>>())
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { k_factors: self.k_factors, sigmas, seed: self.seed })
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map_curves(|g| Ok(g.scaled(a))).expect("scaling cannot fail")
    }

    /// `sum_f sigma_f(step) * dW_f` for one (path, step).
    pub fn increment_curve(
        &self,
        incs: &WienerIncrements,
        path: usize,
        step: usize,
    ) -> Result<GridFunction> {
        let mut acc = self.sigma(0, step).scaled(incs.get(path, step, 0));
        for f in 1..self.k_factors {
            acc.add_scaled_mut(incs.get(path, step, f), self.sigma(f, step))?;
        }
        Ok(acc)
    }
}

/// Parameters of the semigroup driving a convolution.
#[derive(Debug, Clone, Copy)]
pub struct SemigroupParams {
    pub eps: f64,
    pub kind: PerturbationKind,
    pub w: f64,
}

impl SemigroupParams {
    pub fn shift_only() -> Self {
        Self { eps: 0.0, kind: PerturbationKind::SecondDerivative, w: 1.0 }
    }
}

/// Per-path, per-step states of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub tg: TimeGrid,
    pub spec: GridSpec,
    pub states: Vec<Vec<GridFunction>>,
    pub increments: Option<Arc<WienerIncrements>>,
    pub seed: u64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, path: usize, step: usize) -> &GridFunction {
        &self.states[path][step]
    }

    /// Pathwise, stepwise linear combination `a * self + b * other`.
    pub fn linear_combination(&self, a: f64, other: &PathEnsemble, b: f64) -> Result<PathEnsemble> {
        if self.n_paths() != other.n_paths() {
            return Err(SpdeError::Structural("ensembles with different path counts".into()));
        }
        let states = self
            .states
            .iter()
            .zip(other.states.iter())
            .map(|(xs, ys)| {
                xs.iter()
                    .zip(ys.iter())
                    .map(|(x, y)| {
                        let mut z = x.scaled(a);
                        z.add_scaled_mut(b, y)?;
                        Ok(z)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathEnsemble {
            tg: self.tg,
            spec: self.spec,
            states,
            increments: self.increments.clone(),
            seed: self.seed,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|p| p.iter().all(|g| g.is_finite()))
    }
}

/// Left-rectangle deterministic convolution
/// `(S * f)(t_j) = sum_{i<j} S(t_j - t_i) f(t_i) dt`.
pub fn det_convolution(
    params: &SemigroupParams,
    curves: &[GridFunction],
    tg: TimeGrid,
) -> Result<Vec<GridFunction>> {
    weighted_det_convolution(params, curves, tg, 0)
}

/// The weighted variant `sum_{i<j} (t_j - t_i)^k S(t_j - t_i) f(t_i) dt`
/// feeding the expansion coefficients.
pub fn weighted_det_convolution(
    params: &SemigroupParams,
    curves: &[GridFunction],
    tg: TimeGrid,
    weight_power: usize,
) -> Result<Vec<GridFunction>> {
    if curves.len() < tg.n_steps {
        return Err(SpdeError::Structural(format!(
            "need {} time samples, got {}",
            tg.n_steps,
            curves.len()
        )));
    }
    let spec = curves[0].spec;
    let ops = gap_operators(spec, tg.dt(), tg.n_steps, params.eps, params.kind, params.w)?;
    let dt = tg.dt();
    let mut out = Vec::with_capacity(tg.n_steps + 1);
    for j in 0..=tg.n_steps {
        let mut acc = GridFunction::zero(spec);
        for i in 0..j {
            let gap = j - i;
            let weight = (gap as f64 * dt).powi(weight_power as i32) * dt;
            acc.add_scaled_mut(weight, &ops[gap].apply(&curves[i]))?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Weighted stochastic convolution
/// `Sigma_k(t_j) = sum_{i<j} (t_j - t_i)^k S(t_j - t_i) [sum_f sigma_f dW_f(t_i)]`
/// with the left-point (Ito) rule.
pub fn stoch_convolution(
    params: &SemigroupParams,
    noise: &NoiseModel,
    tg: TimeGrid,
    incs: &Arc<WienerIncrements>,
    weight_power: usize,
) -> Result<PathEnsemble> {
    let spec = noise.sigma(0, 0).spec;
    let ops = gap_operators(spec, tg.dt(), tg.n_steps, params.eps, params.kind, params.w)?;
    let dt = tg.dt();
    let states: Vec<Vec<GridFunction>> = (0..incs.n_paths)
        .into_par_iter()
        .map(|path| {
            let noise_curves: Vec<GridFunction> = (0..tg.n_steps)
                .map(|i| noise.increment_curve(incs, path, i))
                .collect::<Result<Vec<_>>>()?;
            let mut traj = Vec::with_capacity(tg.n_steps + 1);
            for j in 0..=tg.n_steps {
                let mut acc = GridFunction::zero(spec);
                for (i, curve) in noise_curves.iter().enumerate().take(j) {
                    let gap = j - i;
                    let weight = (gap as f64 * dt).powi(weight_power as i32);
                    acc.add_scaled_mut(weight, &ops[gap].apply(curve))?;
                }
                traj.push(acc);
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        tg,
        spec,
        states,
        increments: Some(Arc::clone(incs)),
        seed: incs.seed,
    })
}

/// Max relative error of the recursion `Sigma_{k+1} = (k+1) S * Sigma_k`
/// over paths and times.
pub fn verify_recursion(
    params: &SemigroupParams,
    sp: &WeightedSpace,
    k: usize,
    tg: TimeGrid,
    noise: &NoiseModel,
    incs: &Arc<WienerIncrements>,
) -> Result<f64> {
    let sigma_k = stoch_convolution(params, noise, tg, incs, k)?;
    let sigma_k1 = stoch_convolution(params, noise, tg, incs, k + 1)?;
    let mut worst = 0.0_f64;
    for path in 0..incs.n_paths {
        let conv = det_convolution(params, &sigma_k.states[path], tg)?;
        for j in 0..=tg.n_steps {
            let lhs = &sigma_k1.states[path][j];
            let mut diff = lhs.clone();
            diff.add_scaled_mut(-((k + 1) as f64), &conv[j])?;
            let denom = 1.0 + sp.norm(lhs)?;
            worst = worst.max(sp.norm(&diff)? / denom);
        }
    }
    Ok(worst)
}

/// Monte Carlo estimate of the `C^p` quasi-norm:
/// `((1/n) sum_paths (max_steps ||state||)^p)^{1/p}`.
pub fn lp_norm_estimate(ens: &PathEnsemble, p: f64, sp: &WeightedSpace) -> Result<f64> {
    if !(p > 0.0) {
        return Err(SpdeError::Domain(format!("p must be positive, got {p}")));
    }
    let q = sp.quadrature();
    let mut acc = 0.0;
    for path in &ens.states {
        let mut sup = 0.0_f64;
        for state in path {
            let df = state.derivative(1)?;
            let norm2 = q.weighted_pairing(&df.values, &df.values)
                + state.limit_at_infinity * state.limit_at_infinity;
            sup = sup.max(norm2.max(0.0).sqrt());
        }
        acc += sup.powf(p);
    }
    Ok((acc / ens.n_paths() as f64).powf(1.0 / p))
}

/// Per-time-step norm statistics (mean and quantiles over paths) as CSV.
pub fn summary_csv(ens: &PathEnsemble, sp: &WeightedSpace) -> Result<String> {
    use std::fmt::Write as _;
    let mut out = String::from("t,mean_norm,q05,q50,q95\n");
    for j in 0..=ens.tg.n_steps {
        let mut norms: Vec<f64> = ens
            .states
            .iter()
            .map(|p| sp.norm(&p[j]))
            .collect::<Result<Vec<_>>>()?;
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        let quant = |q: f64| {
            let idx = ((norms.len() - 1) as f64 * q).round() as usize;
            norms[idx]
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            ens.tg.time(j),
            mean,
            quant(0.05),
            quant(0.5),
            quant(0.95)
        );
    }
    Ok(out)
}

/// [`summary_csv`] straight to a file.
pub fn write_summary_csv(ens: &PathEnsemble, sp: &WeightedSpace, path: &Path) -> Result<()> {
    std::fs::write(path, summary_csv(ens, sp)?)?;
    Ok(())
}

/// Raw ensemble to a flat little-endian binary file.
///
/// Layout: header `K: u32, n_steps: u32, n_paths: u32, n: u32, dx: f64`,
/// then `x_min: f64, t_end: f64`, then for each path and step the limit at
/// infinity followed by the `n` values, all `f64`.
pub fn write_binary(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let k = ens
        .increments
        .as_ref()
        .map(|i| i.k_factors)
        .unwrap_or(0);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(k as u32).to_le_bytes())?;
    file.write_all(&(ens.tg.n_steps as u32).to_le_bytes())?;
    file.write_all(&(ens.n_paths() as u32).to_le_bytes())?;
    file.write_all(&(ens.spec.n as u32).to_le_bytes())?;
    file.write_all(&ens.spec.dx.to_le_bytes())?;
    file.write_all(&ens.spec.x_min.to_le_bytes())?;
    file.write_all(&ens.tg.t_end.to_le_bytes())?;
    for p in &ens.states {
        for state in p {
            file.write_all(&state.limit_at_infinity.to_le_bytes())?;
            for v in &state.values {
                file.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read back an ensemble written by [`write_binary`] (increments are not
/// stored and come back empty).
pub fn read_binary(path: &Path) -> Result<PathEnsemble> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    let mut read_u32 = |f: &mut dyn Read| -> Result<u32> {
        f.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let _k = read_u32(&mut file)?;
    let n_steps = read_u32(&mut file)? as usize;
    let n_paths = read_u32(&mut file)? as usize;
    let n = read_u32(&mut file)? as usize;
    let mut read_f64 = move |f: &mut dyn Read| -> Result<f64> {
        f.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let dx = read_f64(&mut file)?;
    let x_min = read_f64(&mut file)?;
    let t_end = read_f64(&mut file)?;
    let spec = GridSpec::new(x_min, x_min + dx * (n - 1) as f64, n)?;
    let tg = TimeGrid::new(t_end, n_steps)?;
    let mut states = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut traj = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            let limit = read_f64(&mut file)?;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(read_f64(&mut file)?);
            }
            traj.push(GridFunction::new(spec, values, limit)?);
        }
        states.push(traj);
    }
    Ok(PathEnsemble { tg, spec, states, increments: None, seed: 0 })
}
