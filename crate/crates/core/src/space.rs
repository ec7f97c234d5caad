//! Weighted spaces of curves on a truncated uniform grid.
//!
//! An element of `H` is a function together with its limit at plus infinity;
//! the scalar product pairs the limits and the first derivatives against the
//! exponential weight `e^{w x}`:
//!
//! `<f, g> = f(inf) g(inf) + integral f'(x) g'(x) e^{w x} dx`.
//!
//! Derivatives are fourth-order finite differences, integrals composite
//! trapezoid (norms) or the fourth-order cumulative rule (antiderivatives).

use crate::stencil;
use crate::{Result, SpdeError};
use std::fmt::Write as _;
use std::path::Path;

/// Default tolerance factor for the tail consistency check
/// `|values[n-1] - limit| <= TAIL_TOL * (1 + |limit|)`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Weighted size `|f'(x)|^2 e^{w x}` allowed at the truncation ends.
pub const TRUNCATION_TOL: f64 = 1e-12;

/// Uniform grid on `[x_min, x_max]` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(SpdeError::Structural(format!("grid needs n >= 8, got {n}")));
        }
        if !(x_max > x_min) {
            return Err(SpdeError::Structural(format!(
                "grid needs x_max > x_min, got [{x_min}, {x_max}]"
            )));
        }
        let dx = (x_max - x_min) / (n - 1) as f64;
        Ok(Self { x_min, x_max, n, dx })
    }

    /// Half-line grid `[0, x_max]` as used by the forward-rate space.
    pub fn half_line(x_max: f64, n: usize) -> Result<Self> {
        Self::new(0.0, x_max, n)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.x(i))
    }

    /// Index of the grid point at coordinate `x`, if `x` lies on the grid.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.x_min) / self.dx;
        let i = r.round();
        if (r - i).abs() < 1e-8 && i >= 0.0 && (i as usize) < self.n {
            Some(i as usize)
        } else {
            None
        }
    }

    pub(crate) fn same_grid(&self, other: &GridSpec) -> bool {
        self.n == other.n
            && (self.x_min - other.x_min).abs() < 1e-12 * (1.0 + self.x_min.abs())
            && (self.x_max - other.x_max).abs() < 1e-12 * (1.0 + self.x_max.abs())
    }
}

/// A curve on a grid plus its limit at plus infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub limit_at_infinity: f64,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>, limit_at_infinity: f64) -> Result<Self> {
        if values.len() != spec.n {
            return Err(SpdeError::Structural(format!(
                "value vector length {} does not match grid n = {}",
                values.len(),
                spec.n
            )));
        }
        if !values.iter().all(|v| v.is_finite()) || !limit_at_infinity.is_finite() {
            return Err(SpdeError::Numeric("non-finite values in grid function".into()));
        }
        Ok(Self { spec, values, limit_at_infinity })
    }

    pub fn zero(spec: GridSpec) -> Self {
        Self { spec, values: vec![0.0; spec.n], limit_at_infinity: 0.0 }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, values: vec![c; spec.n], limit_at_infinity: c }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64) -> f64, limit_at_infinity: f64) -> Self {
        let values = spec.xs().map(f).collect();
        Self { spec, values, limit_at_infinity }
    }

    /// Gap between the last sample and the stored limit.
    pub fn tail_gap(&self) -> f64 {
        (self.values[self.spec.n - 1] - self.limit_at_infinity).abs()
    }

    /// Enforce `|values[n-1] - limit| <= tol * (1 + |limit|)`.
    pub fn check_tail(&self, tol: Option<f64>) -> Result<()> {
        let tol = tol.unwrap_or(DEFAULT_TAIL_TOL);
        let bound = tol * (1.0 + self.limit_at_infinity.abs());
        if self.tail_gap() > bound {
            return Err(SpdeError::Domain(format!(
                "tail gap {} exceeds tolerance {}",
                self.tail_gap(),
                bound
            )));
        }
        Ok(())
    }

    /// Fourth-order finite-difference derivative; the result decays at
    /// infinity, so its limit is zero.
    ///
    /// The stencil acts on `f - f(inf)`: the derivative is unchanged, but
    /// the roundoff on the flat tail (which the exponential weight at the
    /// right end would amplify by `e^{w x_max}`) scales with the tail gap
    /// instead of the plateau value.
    pub fn derivative(&self, order: usize) -> Result<GridFunction> {
        let values = if self.limit_at_infinity == 0.0 {
            stencil::differentiate(&self.values, self.spec.dx, order)?
        } else {
            let centered: Vec<f64> =
                self.values.iter().map(|v| v - self.limit_at_infinity).collect();
            stencil::differentiate(&centered, self.spec.dx, order)?
        };
        Ok(GridFunction { spec: self.spec, values, limit_at_infinity: 0.0 })
    }

    pub fn scaled(&self, a: f64) -> GridFunction {
        GridFunction {
            spec: self.spec,
            values: self.values.iter().map(|v| a * v).collect(),
            limit_at_infinity: a * self.limit_at_infinity,
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b, self.limit_at_infinity + other.limit_at_infinity)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b, self.limit_at_infinity - other.limit_at_infinity)
    }

    pub fn mul_pointwise(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a * b, self.limit_at_infinity * other.limit_at_infinity)
    }

    fn zip_with(
        &self,
        other: &GridFunction,
        op: impl Fn(f64, f64) -> f64,
        limit: f64,
    ) -> Result<GridFunction> {
        if !self.spec.same_grid(&other.spec) {
            return Err(SpdeError::Structural("grid functions on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| op(*a, *b))
            .collect();
        Ok(GridFunction { spec: self.spec, values, limit_at_infinity: limit })
    }

    /// `self += a * other`; grids must match (checked).
    pub fn add_scaled_mut(&mut self, a: f64, other: &GridFunction) -> Result<()> {
        if !self.spec.same_grid(&other.spec) {
            return Err(SpdeError::Structural("grid functions on different grids".into()));
        }
        for (s, o) in self.values.iter_mut().zip(other.values.iter()) {
            *s += a * o;
        }
        self.limit_at_infinity += a * other.limit_at_infinity;
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.limit_at_infinity.is_finite() && self.values.iter().all(|v| v.is_finite())
    }

    /// CSV serialization: `# limit_at_infinity=<real>` header, then `x,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# limit_at_infinity={}", self.limit_at_infinity);
        let _ = writeln!(out, "x,value");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.spec.x(i), v);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<GridFunction> {
        let text = std::fs::read_to_string(path)?;
        let mut limit = None;
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "x,value" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("limit_at_infinity=") {
                    limit = Some(v.trim().parse::<f64>().map_err(|e| {
                        SpdeError::Io(format!("bad limit_at_infinity: {e}"))
                    })?);
                }
                continue;
            }
            let mut parts = line.split(',');
            let x: f64 = parts
                .next()
                .ok_or_else(|| SpdeError::Io("missing x column".into()))?
                .trim()
                .parse()
                .map_err(|e| SpdeError::Io(format!("bad x: {e}")))?;
            let v: f64 = parts
                .next()
                .ok_or_else(|| SpdeError::Io("missing value column".into()))?
                .trim()
                .parse()
                .map_err(|e| SpdeError::Io(format!("bad value: {e}")))?;
            xs.push(x);
            values.push(v);
        }
        let limit = limit.ok_or_else(|| SpdeError::Io("missing limit_at_infinity header".into()))?;
        if xs.len() < 8 {
            return Err(SpdeError::Io("too few rows for a grid function".into()));
        }
        let spec = GridSpec::new(xs[0], *xs.last().unwrap(), xs.len())?;
        GridFunction::new(spec, values, limit)
    }
}

/// The exponentially weighted space: weight `w > 0` plus the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSpace {
    pub w: f64,
    pub spec: GridSpec,
}

impl WeightedSpace {
    pub fn new(w: f64, spec: GridSpec) -> Result<Self> {
        if !(w > 0.0) {
            return Err(SpdeError::Domain(format!("weight must be positive, got {w}")));
        }
        Ok(Self { w, spec })
    }

    /// `<f, g> = f(inf) g(inf) + trapezoid(f' g' e^{w x})`.
    pub fn inner_product(&self, f: &GridFunction, g: &GridFunction) -> Result<f64> {
        if !f.spec.same_grid(&self.spec) || !g.spec.same_grid(&self.spec) {
            return Err(SpdeError::Structural("inner product across different grids".into()));
        }
        let q = self.quadrature();
        let df = f.derivative(1)?;
        let dg = g.derivative(1)?;
        let val = q.weighted_pairing(&df.values, &dg.values)
            + f.limit_at_infinity * g.limit_at_infinity;
        if !val.is_finite() {
            return Err(SpdeError::Numeric("inner product not finite".into()));
        }
        Ok(val)
    }

    pub fn norm(&self, f: &GridFunction) -> Result<f64> {
        Ok(self.inner_product(f, f)?.max(0.0).sqrt())
    }

    /// Weighted `L^2_w` seminorm of the derivative alone.
    pub fn seminorm(&self, f: &GridFunction) -> Result<f64> {
        let df = f.derivative(1)?;
        let q = self.quadrature();
        Ok(q.weighted_pairing(&df.values, &df.values).max(0.0).sqrt())
    }

    /// Check the truncation admissibility: weighted derivative mass below
    /// [`TRUNCATION_TOL`] at both ends (plus the stencil roundoff floor,
    /// which the exponential weight amplifies) and a consistent tail.
    pub fn check_admissible(&self, f: &GridFunction) -> Result<()> {
        self.check_admissible_sides(f, true)
    }

    /// Admissibility with an optional left end. Reflection-extended curves
    /// keep a stretched tail on the left that the left-shift transport never
    /// carries onto the half-line; callers restricting results there may
    /// skip the left-decay requirement. Half-line grids have a genuine
    /// boundary at zero rather than a truncation, so the left check only
    /// applies when `x_min < 0`.
    pub fn check_admissible_sides(&self, f: &GridFunction, check_left: bool) -> Result<()> {
        let check_left = check_left && self.spec.x_min < 0.0;
        f.check_tail(None)?;
        let df = f.derivative(1)?;
        let scale = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let stencil_floor = 4.0 * f64::EPSILON * scale * 1.5 / self.spec.dx;
        let end_mass = |i: usize| {
            let noise = stencil_floor * stencil_floor * (self.w * self.spec.x(i)).exp();
            let mass = df.values[i] * df.values[i] * (self.w * self.spec.x(i)).exp();
            (mass, noise)
        };
        let (left, left_noise) = end_mass(0);
        let (right, right_noise) = end_mass(self.spec.n - 1);
        if (check_left && left > TRUNCATION_TOL + left_noise) || right > TRUNCATION_TOL + right_noise
        {
            return Err(SpdeError::Domain(format!(
                "weighted derivative mass at truncation ends ({left:.3e}, {right:.3e}) exceeds {TRUNCATION_TOL:.0e}"
            )));
        }
        Ok(())
    }

    /// Cached trapezoid weights against `e^{w x}` for hot loops.
    pub fn quadrature(&self) -> SpaceQuadrature {
        let n = self.spec.n;
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let trap = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            weights.push(trap * self.spec.dx * (self.w * self.spec.x(i)).exp());
        }
        SpaceQuadrature { weights }
    }
}

/// Precomputed weighted trapezoid rule.
pub struct SpaceQuadrature {
    weights: Vec<f64>,
}

impl SpaceQuadrature {
    pub fn weighted_pairing(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, a), b) in self.weights.iter().zip(a.iter()).zip(b.iter()) {
            acc += w * a * b;
        }
        acc
    }
}

/// Cumulative integral from zero, `[I f](x) = integral_0^x f`, with the limit
/// set to the full integral over `[0, x_max]`. Requires `f(inf) = 0`; the
/// integral diverges otherwise.
pub fn integrate_from_zero(f: &GridFunction) -> Result<GridFunction> {
    let anchor = f.spec.index_of(0.0).ok_or_else(|| {
        SpdeError::Structural("integrate_from_zero needs 0 on the grid".into())
    })?;
    let scale = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if f.limit_at_infinity.abs() > 1e-12 * (1.0 + scale) {
        return Err(SpdeError::Domain(format!(
            "integrate_from_zero requires f(inf) = 0, got {}",
            f.limit_at_infinity
        )));
    }
    let values = stencil::cumulative_integral(&f.values, f.spec.dx, anchor);
    let limit = values[f.spec.n - 1];
    GridFunction::new(f.spec, values, limit)
}

/// Restriction of a full-line function to the half-line grid `[0, x_max]`.
/// The half-line norm can only decrease; this is checked numerically.
pub fn restrict_to_halfline(f: &GridFunction, w: f64) -> Result<GridFunction> {
    let zero = f.spec.index_of(0.0).ok_or_else(|| {
        SpdeError::Structural("restriction needs the half-line grid points on the full grid".into())
    })?;
    let n_half = f.spec.n - zero;
    if n_half < 8 {
        return Err(SpdeError::Structural("half-line part of the grid too short".into()));
    }
    let half_spec = GridSpec::half_line(f.spec.x_max, n_half)?;
    let restricted = GridFunction {
        spec: half_spec,
        values: f.values[zero..].to_vec(),
        limit_at_infinity: f.limit_at_infinity,
    };
    let full_norm = WeightedSpace::new(w, f.spec)?.norm(f)?;
    let half_norm = WeightedSpace::new(w, half_spec)?.norm(&restricted)?;
    if half_norm > full_norm * (1.0 + 1e-8) + 1e-12 {
        return Err(SpdeError::Numeric(format!(
            "restriction norm {half_norm} exceeds full-line norm {full_norm}"
        )));
    }
    Ok(restricted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_grid() -> GridSpec {
        GridSpec::new(-16.0, 24.0, 1281).unwrap()
    }

    /// Curve with derivative `e^{-x^2}` and `f(inf) = 0`.
    fn gaussian_derivative_curve(spec: GridSpec) -> GridFunction {
        let dvals: Vec<f64> = spec.xs().map(|x| (-x * x).exp()).collect();
        let mut values = stencil::cumulative_integral(&dvals, spec.dx, 0);
        let total = values[spec.n - 1];
        for v in values.iter_mut() {
            *v -= total;
        }
        GridFunction::new(spec, values, 0.0).unwrap()
    }

    #[test]
    fn inner_product_of_constants_is_limit_product() {
        let spec = full_grid();
        let sp = WeightedSpace::new(1.0, spec).unwrap();
        let f = GridFunction::constant(spec, 3.0);
        let g = GridFunction::constant(spec, -2.0);
        let ip = sp.inner_product(&f, &g).unwrap();
        assert!((ip + 6.0).abs() < 1e-12, "got {ip}");
        let z = GridFunction::zero(spec);
        assert_eq!(sp.inner_product(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_matches_gaussian_closed_form() {
        // f' = e^{-x^2}, w = 1: integral e^{-2x^2 + x} dx = e^{1/8} sqrt(pi/2).
        let spec = full_grid();
        let sp = WeightedSpace::new(1.0, spec).unwrap();
        let f = gaussian_derivative_curve(spec);
        let exact = (1.0_f64 / 8.0).exp() * (std::f64::consts::PI / 2.0).sqrt();
        let ip = sp.inner_product(&f, &f).unwrap();
        assert!((ip - exact).abs() < 1e-4, "ip = {ip}, exact = {exact}");
        let norm = sp.norm(&f).unwrap();
        assert!((norm - exact.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn norm_of_constant_is_absolute_value() {
        let spec = full_grid();
        let sp = WeightedSpace::new(0.5, spec).unwrap();
        let f = GridFunction::constant(spec, -4.0);
        assert!((sp.norm(&f).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_rejects_mismatched_grids() {
        let a = GridSpec::new(-16.0, 24.0, 1281).unwrap();
        let b = GridSpec::new(-16.0, 24.0, 641).unwrap();
        let sp = WeightedSpace::new(1.0, a).unwrap();
        let f = GridFunction::zero(a);
        let g = GridFunction::zero(b);
        assert!(matches!(
            sp.inner_product(&f, &g),
            Err(SpdeError::Structural(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let spec = GridSpec::new(-3.0, 3.0, 301).unwrap();
        let c = GridFunction::constant(spec, 7.5);
        let dc = c.derivative(1).unwrap();
        assert!(dc.values.iter().all(|v| v.abs() < 1e-10));
        assert_eq!(dc.limit_at_infinity, 0.0);

        let f = GridFunction::from_fn(spec, |x| x.sin(), 0.0);
        let df = f.derivative(1).unwrap();
        let dx4 = spec.dx.powi(4);
        for i in 10..spec.n - 10 {
            let err = (df.values[i] - spec.x(i).cos()).abs();
            assert!(err < 5.0 * dx4, "interior error {err} at {}", spec.x(i));
        }

        let lin = GridFunction::from_fn(spec, |x| x, 0.0);
        let d2 = lin.derivative(2).unwrap();
        for i in 4..spec.n - 4 {
            assert!(d2.values[i].abs() < 1e-8);
        }
    }

    #[test]
    fn integrate_from_zero_examples() {
        let spec = GridSpec::half_line(40.0, 2001).unwrap();
        let z = integrate_from_zero(&GridFunction::zero(spec)).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));

        let f = GridFunction::from_fn(spec, |x| (-x).exp(), 0.0);
        let int = integrate_from_zero(&f).unwrap();
        for i in 0..spec.n {
            let exact = 1.0 - (-spec.x(i)).exp();
            assert!((int.values[i] - exact).abs() < 1e-6, "at x={}", spec.x(i));
        }
        assert!((int.limit_at_infinity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn integrate_from_zero_bump_limit_matches_quadrature_oracle() {
        let spec = GridSpec::half_line(40.0, 4001).unwrap();
        // Bump of integral ~ 1 (normalized Gaussian centered at 3).
        let c = 1.0 / std::f64::consts::PI.sqrt();
        let f = GridFunction::from_fn(spec, |x| c * (-(x - 3.0) * (x - 3.0)).exp(), 0.0);
        let int = integrate_from_zero(&f).unwrap();
        // Independent oracle: Simpson rule on the same samples.
        let mut simpson = 0.0;
        for i in (0..spec.n - 2).step_by(2) {
            simpson += spec.dx / 3.0
                * (f.values[i] + 4.0 * f.values[i + 1] + f.values[i + 2]);
        }
        assert!((int.limit_at_infinity - simpson).abs() < 1e-8);
        assert!((int.limit_at_infinity - 1.0).abs() < 1e-3);
    }

    #[test]
    fn integrate_from_zero_rejects_nonzero_limit() {
        let spec = GridSpec::half_line(40.0, 801).unwrap();
        let f = GridFunction::constant(spec, 1.0);
        assert!(matches!(integrate_from_zero(&f), Err(SpdeError::Domain(_))));
    }

    #[test]
    fn restriction_examples() {
        let spec = full_grid();
        let c = GridFunction::constant(spec, 2.5);
        let r = restrict_to_halfline(&c, 1.0).unwrap();
        assert_eq!(r.spec.x_min, 0.0);
        assert!(r.values.iter().all(|v| (*v - 2.5).abs() < 1e-15));
        assert_eq!(r.limit_at_infinity, 2.5);

        // Supported in x < 0 with zero limit: restriction vanishes.
        let f = GridFunction::from_fn(spec, |x| (-(x + 10.0) * (x + 10.0)).exp(), 0.0);
        let r = restrict_to_halfline(&f, 1.0).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-40));

        // Norm inequality on a generic curve.
        let g = gaussian_derivative_curve(spec);
        let rg = restrict_to_halfline(&g, 1.0).unwrap();
        let full = WeightedSpace::new(1.0, spec).unwrap().norm(&g).unwrap();
        let half = WeightedSpace::new(1.0, rg.spec).unwrap().norm(&rg).unwrap();
        assert!(half <= full * (1.0 + 1e-8));
    }

    #[test]
    fn derivative_inverts_integration_to_fourth_order() {
        let spec = GridSpec::half_line(30.0, 1501).unwrap();
        let f = GridFunction::from_fn(spec, |x| (-0.3 * x).exp() * (x * 0.7).cos(), 0.0);
        let int = integrate_from_zero(&f).unwrap();
        let back = int.derivative(1).unwrap();
        let dx4 = spec.dx.powi(4);
        for i in 8..spec.n - 8 {
            let err = (back.values[i] - f.values[i]).abs();
            assert!(err < 40.0 * dx4, "roundtrip error {err} at index {i}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = GridSpec::new(-1.0, 5.0, 61).unwrap();
        let f = GridFunction::from_fn(spec, |x| (x * 0.5).tanh(), 1.0);
        let dir = std::env::temp_dir().join("spde_space_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.csv");
        f.write_csv(&path).unwrap();
        let g = GridFunction::read_csv(&path).unwrap();
        assert_eq!(f.spec.n, g.spec.n);
        assert!(f.max_abs_diff(&g) < 1e-12);
        assert_eq!(f.limit_at_infinity, g.limit_at_infinity);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tail_check() {
        let spec = GridSpec::half_line(40.0, 801).unwrap();
        let ok = GridFunction::constant(spec, 1.0);
        ok.check_tail(None).unwrap();
        let mut bad = GridFunction::constant(spec, 1.0);
        bad.limit_at_infinity = 2.0;
        assert!(bad.check_tail(None).is_err());
    }
}
