//! The shift semigroup, the heat semigroup of the second-order perturbation,
//! their products, resolvents, Taylor expansion and structural checks.
//!
//! Shifts move samples by whole grid slots, so they are exact. The heat
//! semigroup acts on the derivative of a curve through a spectral multiplier
//! `exp(-xi^2 t)` on a zero-padded copy of the data (padding of at least
//! eight standard deviations replaces a truncated convolution kernel), and
//! the curve is re-integrated anchored at its value at the right end. Only
//! the increment `(e^{t G} - 1) f'` is re-integrated, so the map tends to
//! the identity as `t -> 0` and the family stays smooth in the perturbation
//! parameter down to `eps = 0`, which the expansion experiments rely on.

use crate::space::{GridFunction, GridSpec, WeightedSpace};
use crate::stencil;
use crate::{Result, SpdeError};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    // rustfft planners cache twiddle tables per transform size.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Which second-order perturbation generates the heat factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// `G = A^2`, the plain second derivative (Musiela perturbation).
    SecondDerivative,
    /// `G = A^2 - (w^2/2) I`, the dissipative shift of it.
    SecondDerivativeShifted,
}

impl PerturbationKind {
    /// Growth rate `w_G` in `||S_G(t)|| <= e^{w_G t}`.
    pub fn growth_rate(&self, w: f64) -> f64 {
        match self {
            PerturbationKind::SecondDerivative => w * w / 2.0,
            PerturbationKind::SecondDerivativeShifted => 0.0,
        }
    }

    /// Spectral shift `c` in `G = A^2 - c I`.
    pub fn spectral_shift(&self, w: f64) -> f64 {
        match self {
            PerturbationKind::SecondDerivative => 0.0,
            PerturbationKind::SecondDerivativeShifted => w * w / 2.0,
        }
    }
}

/// Generator taxonomy with the growth constants `||S(t)|| <= M e^{omega t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorKind {
    Shift,
    SecondDerivative,
    SecondDerivativeShifted,
    Sum { eps: f64, kind: PerturbationKind },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTag {
    pub kind: GeneratorKind,
    pub m: f64,
    pub omega: f64,
}

impl GeneratorTag {
    pub fn new(kind: GeneratorKind, w: f64) -> Self {
        let omega = match kind {
            GeneratorKind::Shift => 0.0,
            GeneratorKind::SecondDerivative => w * w / 2.0,
            GeneratorKind::SecondDerivativeShifted => 0.0,
            GeneratorKind::Sum { eps, kind } => eps * kind.growth_rate(w),
        };
        GeneratorTag { kind, m: 1.0, omega }
    }
}

/// Left shift `[S_A(t) f](x) = f(x + t)` for `t` a whole number of grid
/// slots; the right end is filled flat at the limit.
pub fn shift_apply(f: &GridFunction, t: f64) -> Result<GridFunction> {
    let slots = shift_slots(f.spec, t)?;
    Ok(shift_by_slots(f, slots))
}

pub(crate) fn shift_slots(spec: GridSpec, t: f64) -> Result<usize> {
    if t < 0.0 {
        return Err(SpdeError::Domain(format!("shift needs t >= 0, got {t}")));
    }
    let r = t / spec.dx;
    let k = r.round();
    if (r - k).abs() > 1e-8 * (1.0 + r) {
        return Err(SpdeError::Alignment(format!(
            "shift time {t} is not a whole number of grid slots (dx = {})",
            spec.dx
        )));
    }
    Ok(k as usize)
}

pub(crate) fn shift_by_slots(f: &GridFunction, slots: usize) -> GridFunction {
    let n = f.spec.n;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let j = i + slots;
        values.push(if j < n { f.values[j] } else { f.limit_at_infinity });
    }
    GridFunction { spec: f.spec, values, limit_at_infinity: f.limit_at_infinity }
}

fn next_pow2(mut n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    let _ = &mut n;
    p
}

/// Spectral heat flow `e^{t A^2}` acting on derivative samples.
pub struct HeatTransform {
    n: usize,
    pad: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    multiplier: Vec<f64>,
}

impl HeatTransform {
    pub fn new(spec: GridSpec, t: f64) -> Result<Self> {
        if t < 0.0 {
            return Err(SpdeError::Domain(format!("heat flow needs t >= 0, got {t}")));
        }
        let sigma = (2.0 * t).sqrt();
        if 8.0 * sigma >= spec.x_max - spec.x_min {
            return Err(SpdeError::Domain(format!(
                "heat kernel support 8*sigma = {} exceeds the grid length {}",
                8.0 * sigma,
                spec.x_max - spec.x_min
            )));
        }
        let pad = (8.0 * sigma / spec.dx).ceil() as usize + 8;
        let len = next_pow2(spec.n + 2 * pad);
        let (fwd, inv) = PLANNER.with(|p| {
            let mut planner = p.borrow_mut();
            (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
        });
        let mut multiplier = Vec::with_capacity(len);
        for k in 0..len {
            let freq = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
            let xi = 2.0 * std::f64::consts::PI * freq / (len as f64 * spec.dx);
            multiplier.push((-xi * xi * t).exp());
        }
        Ok(Self { n: spec.n, pad, len, fwd, inv, multiplier })
    }

    /// Apply `e^{t A^2}` to samples (zero extension outside the grid).
    pub fn apply_samples(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.n);
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for (i, v) in g.iter().enumerate() {
            buf[self.pad + i].re = *v;
        }
        self.fwd.process(&mut buf);
        for (b, m) in buf.iter_mut().zip(self.multiplier.iter()) {
            *b *= *m;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf[self.pad..self.pad + self.n].iter().map(|c| c.re * scale).collect()
    }
}

/// Heat semigroup `S_G(t)`: the derivative is smoothed spectrally, the curve
/// re-integrated anchored at the right end, and for the shifted generator
/// the whole result carries the factor `e^{-w^2 t / 2}`.
pub fn heat_apply(f: &GridFunction, t: f64, kind: PerturbationKind, w: f64) -> Result<GridFunction> {
    if t < 0.0 {
        return Err(SpdeError::Domain(format!("heat flow needs t >= 0, got {t}")));
    }
    let decay = (-kind.spectral_shift(w) * t).exp();
    if t == 0.0 {
        return Ok(f.clone());
    }
    let ht = HeatTransform::new(f.spec, t)?;
    Ok(heat_apply_with(f, &ht, decay))
}

pub(crate) fn heat_apply_with(f: &GridFunction, ht: &HeatTransform, decay: f64) -> GridFunction {
    let g = f.derivative(1).expect("derivative order 1 is always supported");
    let gs = ht.apply_samples(&g.values);
    let n = f.spec.n;
    let delta: Vec<f64> = gs.iter().zip(g.values.iter()).map(|(a, b)| a - b).collect();
    let correction = stencil::cumulative_integral(&delta, f.spec.dx, n - 1);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        values.push(decay * (f.values[i] + correction[i]));
    }
    GridFunction { spec: f.spec, values, limit_at_infinity: decay * f.limit_at_infinity }
}

/// One application of `S_{A + eps G}(t) = S_A(t) S_{eps G}(t)`; the heat
/// factor runs for time `eps * t`.
pub fn product_apply(
    f: &GridFunction,
    t: f64,
    eps: f64,
    kind: PerturbationKind,
    w: f64,
) -> Result<GridFunction> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(SpdeError::Domain(format!("eps must lie in [0, 1], got {eps}")));
    }
    let shifted = shift_apply(f, t)?;
    if eps == 0.0 || t == 0.0 {
        return Ok(shifted);
    }
    heat_apply(&shifted, eps * t, kind, w)
}

/// Reusable operator for a fixed gap `S_A(q dt) S_{eps G}(q dt)`.
pub struct GapOperator {
    slots: usize,
    heat: Option<HeatTransform>,
    decay: f64,
}

impl GapOperator {
    pub fn new(spec: GridSpec, t: f64, eps: f64, kind: PerturbationKind, w: f64) -> Result<Self> {
        let slots = shift_slots(spec, t)?;
        if eps == 0.0 || t == 0.0 {
            return Ok(Self { slots, heat: None, decay: 1.0 });
        }
        let heat_time = eps * t;
        Ok(Self {
            slots,
            heat: Some(HeatTransform::new(spec, heat_time)?),
            decay: (-kind.spectral_shift(w) * heat_time).exp(),
        })
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        let shifted = shift_by_slots(f, self.slots);
        match &self.heat {
            None => shifted,
            Some(ht) => heat_apply_with(&shifted, ht, self.decay),
        }
    }
}

/// The family `S_{A + eps G}(q dt)` for `q = 0..=n_steps` (index = gap).
pub fn gap_operators(
    spec: GridSpec,
    dt: f64,
    n_steps: usize,
    eps: f64,
    kind: PerturbationKind,
    w: f64,
) -> Result<Vec<GapOperator>> {
    (0..=n_steps)
        .map(|q| GapOperator::new(spec, q as f64 * dt, eps, kind, w))
        .collect()
}

/// `G^k f` by the stencil table: `(A^2 - c)^k` expanded binomially.
pub fn apply_generator_power(
    f: &GridFunction,
    k: usize,
    kind: PerturbationKind,
    w: f64,
) -> Result<GridFunction> {
    if k == 0 {
        return Ok(f.clone());
    }
    let c = kind.spectral_shift(w);
    let mut acc = GridFunction::zero(f.spec);
    let mut binom = 1.0_f64;
    for j in 0..=k {
        // binom = C(k, j) (-c)^{k-j}
        let coeff = binom * (-c).powi((k - j) as i32);
        if coeff != 0.0 {
            let term = if j == 0 { f.clone() } else { f.derivative(2 * j)? };
            acc.add_scaled_mut(coeff, &term)?;
        }
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    // Constants are eigenfunctions: keep the limit consistent.
    acc.limit_at_infinity = (-c).powi(k as i32) * f.limit_at_infinity;
    Ok(acc)
}

/// Taylor-like expansion of the heat factor:
/// `S_{eps G}(t) f = sum_{k<m} (eps t)^k / k! G^k f + remainder`,
/// the remainder by composite trapezoid quadrature of
/// `(eps^m / (m-1)!) int_0^t (t-u)^{m-1} S_{eps G}(u) G^m f du`
/// over 64 subintervals. Generator powers come from the stencil table; use
/// [`taylor_expand_semigroup_with`] when analytic powers are available
/// (high stencil orders lose significance).
pub fn taylor_expand_semigroup(
    f: &GridFunction,
    t: f64,
    eps: f64,
    m: usize,
    kind: PerturbationKind,
    w: f64,
) -> Result<(GridFunction, GridFunction)> {
    let powers = (1..=m)
        .map(|k| apply_generator_power(f, k, kind, w))
        .collect::<Result<Vec<_>>>()?;
    taylor_expand_semigroup_with(f, &powers, t, eps, kind, w)
}

/// [`taylor_expand_semigroup`] with caller-supplied powers
/// `g_powers[k-1] = G^k f` for `k = 1..=m`.
pub fn taylor_expand_semigroup_with(
    f: &GridFunction,
    g_powers: &[GridFunction],
    t: f64,
    eps: f64,
    kind: PerturbationKind,
    w: f64,
) -> Result<(GridFunction, GridFunction)> {
    let m = g_powers.len();
    if m == 0 {
        return Err(SpdeError::Domain("taylor expansion needs m >= 1".into()));
    }
    let mut partial = f.clone();
    let mut factorial = 1.0;
    for k in 1..m {
        factorial *= k as f64;
        partial.add_scaled_mut((eps * t).powi(k as i32) / factorial, &g_powers[k - 1])?;
    }
    let gm = &g_powers[m - 1];
    if !gm.is_finite() {
        return Err(SpdeError::Domain("G^m f is not finite on this grid".into()));
    }
    let mut remainder = GridFunction::zero(f.spec);
    if t > 0.0 && eps > 0.0 {
        let subs = 64usize;
        let h = t / subs as f64;
        let mut fact_m1 = 1.0;
        for j in 1..m {
            fact_m1 *= j as f64;
        }
        let scale = eps.powi(m as i32) / fact_m1;
        for i in 0..=subs {
            let u = i as f64 * h;
            let weight = if i == 0 || i == subs { 0.5 } else { 1.0 };
            let kernel = (t - u).powi(m as i32 - 1);
            if kernel == 0.0 {
                continue;
            }
            let su = heat_apply(gm, eps * u, kind, w)?;
            remainder.add_scaled_mut(scale * weight * h * kernel, &su)?;
        }
    }
    Ok((partial, remainder))
}

/// Resolvent `(lambda - (A + eps G))^{-1} f` by Laplace quadrature of the
/// product semigroup: trapezoid on grid-aligned nodes over `[0, T_cut]` with
/// `e^{-lambda T_cut} < 1e-10`.
pub fn resolvent_shift(
    lambda: f64,
    f: &GridFunction,
    eps: f64,
    kind: PerturbationKind,
    w: f64,
) -> Result<GridFunction> {
    if lambda <= 0.0 {
        return Err(SpdeError::Domain(format!("resolvent needs lambda > 0, got {lambda}")));
    }
    let spec = f.spec;
    let t_cut = -(1e-10_f64).ln() / lambda;
    // Node spacing: a multiple of dx, at most ~2048 nodes.
    let slots_per_node = ((t_cut / (2048.0 * spec.dx)).ceil() as usize).max(1);
    let h = slots_per_node as f64 * spec.dx;
    let n_nodes = (t_cut / h).ceil() as usize;
    let mut acc = GridFunction::zero(spec);
    for k in 0..=n_nodes {
        let t = k as f64 * h;
        let weight = if k == 0 || k == n_nodes { 0.5 } else { 1.0 };
        let st = product_apply(f, t, eps, kind, w)?;
        acc.add_scaled_mut(weight * h * (-lambda * t).exp(), &st)?;
    }
    if !acc.is_finite() {
        return Err(SpdeError::Numeric("resolvent quadrature diverged".into()));
    }
    Ok(acc)
}

/// Weak solve of `(lambda - G) y = f` through the substitution
/// `z = y' e^{w x / 2}`: the tridiagonal second-order system for
/// `(mu - w^2/4) z + w z' - z'' = f' e^{w x/2}` (with `mu` the equivalent
/// spectral parameter of the plain `A^2` problem) is solved by the Thomas
/// algorithm and polished by iterative refinement against the fourth-order
/// stencil operator; `y` is re-integrated from the right, anchored at
/// `f(inf)/mu`.
pub fn solve_resolvent_g(
    lambda: f64,
    f: &GridFunction,
    kind: PerturbationKind,
    w: f64,
) -> Result<GridFunction> {
    let mu = lambda + kind.spectral_shift(w);
    if mu <= w * w / 4.0 {
        return Err(SpdeError::Coercivity(format!(
            "need lambda + shift > w^2/4 = {}, got {mu}",
            w * w / 4.0
        )));
    }
    let spec = f.spec;
    let n = spec.n;
    let dx = spec.dx;
    let df = f.derivative(1)?;
    let rhs_full: Vec<f64> = (0..n)
        .map(|i| df.values[i] * (w * spec.x(i) / 2.0).exp())
        .collect();

    let a0 = mu - w * w / 4.0;
    // Interior tridiagonal rows (Dirichlet z = 0 at both ends).
    let sub = -w / (2.0 * dx) - 1.0 / (dx * dx);
    let diag = a0 + 2.0 / (dx * dx);
    let sup = w / (2.0 * dx) - 1.0 / (dx * dx);
    let solve_tri = |rhs: &[f64]| -> Result<Vec<f64>> {
        let m = rhs.len();
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        let mut denom = diag;
        if denom.abs() < 1e-300 {
            return Err(SpdeError::Numeric("singular tridiagonal system".into()));
        }
        c_prime[0] = sup / denom;
        d_prime[0] = rhs[0] / denom;
        for i in 1..m {
            denom = diag - sub * c_prime[i - 1];
            if denom.abs() < 1e-300 {
                return Err(SpdeError::Numeric("singular tridiagonal system".into()));
            }
            c_prime[i] = sup / denom;
            d_prime[i] = (rhs[i] - sub * d_prime[i - 1]) / denom;
        }
        let mut z = vec![0.0; m];
        z[m - 1] = d_prime[m - 1];
        for i in (0..m - 1).rev() {
            z[i] = d_prime[i] - c_prime[i] * z[i + 1];
        }
        Ok(z)
    };

    let rhs_scale = rhs_full.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-30);
    let mut z = vec![0.0; n];
    let interior = solve_tri(&rhs_full[1..n - 1])?;
    z[1..n - 1].copy_from_slice(&interior);

    // Refinement against the fourth-order operator.
    for _ in 0..40 {
        let dz = stencil::differentiate(&z, dx, 1)?;
        let d2z = stencil::differentiate(&z, dx, 2)?;
        let mut resid = vec![0.0; n];
        let mut worst = 0.0_f64;
        for i in 1..n - 1 {
            resid[i] = rhs_full[i] - (a0 * z[i] + w * dz[i] - d2z[i]);
            worst = worst.max(resid[i].abs());
        }
        if worst <= 1e-12 * rhs_scale {
            break;
        }
        let corr = solve_tri(&resid[1..n - 1])?;
        for i in 1..n - 1 {
            z[i] += corr[i - 1];
        }
    }

    let y_lim = f.limit_at_infinity / mu;
    let dy: Vec<f64> = (0..n).map(|i| z[i] * (-w * spec.x(i) / 2.0).exp()).collect();
    let cum = stencil::cumulative_integral(&dy, dx, n - 1);
    let values: Vec<f64> = (0..n).map(|i| y_lim + cum[i]).collect();
    let y = GridFunction::new(spec, values, y_lim)?;
    if !y.is_finite() {
        return Err(SpdeError::Numeric("resolvent solve produced non-finite values".into()));
    }
    Ok(y)
}

/// Quadratic form `<L f, f>` of the tagged generator; the caller asserts the
/// sign. For the shifted second derivative this is the shifted combination
/// `<A^2 f, f> - (w^2/2) ||f||^2`.
pub fn dissipativity_check(gen: GeneratorTag, f: &GridFunction, sp: &WeightedSpace) -> Result<f64> {
    let w = sp.w;
    match gen.kind {
        GeneratorKind::Shift => {
            let af = f.derivative(1)?;
            sp.inner_product(&af, f)
        }
        GeneratorKind::SecondDerivative => {
            let a2f = f.derivative(2)?;
            sp.inner_product(&a2f, f)
        }
        GeneratorKind::SecondDerivativeShifted => {
            let a2f = f.derivative(2)?;
            let norm2 = sp.inner_product(f, f)?;
            Ok(sp.inner_product(&a2f, f)? - w * w / 2.0 * norm2)
        }
        GeneratorKind::Sum { eps, kind } => {
            let af = f.derivative(1)?;
            let mut form = sp.inner_product(&af, f)?;
            let gf = apply_generator_power(f, 1, kind, w)?;
            form += eps * sp.inner_product(&gf, f)?;
            Ok(form)
        }
    }
}

/// `|| S_A(t) S_{eps G}(t) f - S_{eps G}(t) S_A(t) f ||`; commuting up to
/// discretization error.
pub fn commutator_residual(
    f: &GridFunction,
    t: f64,
    eps: f64,
    kind: PerturbationKind,
    sp: &WeightedSpace,
) -> Result<f64> {
    if t == 0.0 || eps == 0.0 {
        return Ok(0.0);
    }
    let shifted_first = heat_apply(&shift_apply(f, t)?, eps * t, kind, sp.w)?;
    let heated_first = shift_apply(&heat_apply(f, eps * t, kind, sp.w)?, t)?;
    sp.norm(&shifted_first.sub(&heated_first)?)
}
