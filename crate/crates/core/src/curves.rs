//! Parametric curve families with exact derivatives of every order.
//!
//! The reference experiments need curves whose generator powers `G^k` are
//! available in closed form (stencil error grows quickly with the order);
//! Gaussian bumps and their antiderivatives cover everything used here.

use crate::space::{GridFunction, GridSpec};

/// `a * exp(-((x - c)/s)^2)`: a curve decaying to zero on both sides.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// `base + a * s * sqrt(pi)/2 * (1 + erf((x - c)/s))`: the antiderivative of
/// a Gaussian, i.e. a smooth step with derivative `a * exp(-((x-c)/s)^2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStep {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub base: f64,
}

/// Building blocks for analytic curves.
#[derive(Debug, Clone, Copy)]
pub enum Shape {
    Constant(f64),
    Bump(GaussianBump),
    Step(GaussianStep),
}

/// Values of `d^k/du^k e^{-u^2}` via the Hermite recursion
/// `H_0 = 1`, `H_1 = 2u`, `H_{k+1} = 2u H_k - 2k H_{k-1}`,
/// `d^k e^{-u^2} = (-1)^k H_k(u) e^{-u^2}`.
fn gaussian_derivative(u: f64, k: usize) -> f64 {
    let e = (-u * u).exp();
    if k == 0 {
        return e;
    }
    let mut h_prev = 1.0;
    let mut h = 2.0 * u;
    for j in 1..k {
        let h_next = 2.0 * u * h - 2.0 * j as f64 * h_prev;
        h_prev = h;
        h = h_next;
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * h * e
}

impl Shape {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Shape::Constant(c) => *c,
            Shape::Bump(b) => b.amplitude * (-((x - b.center) / b.width).powi(2)).exp(),
            Shape::Step(s) => {
                let u = (x - s.center) / s.width;
                s.base
                    + s.amplitude * s.width * std::f64::consts::PI.sqrt() / 2.0
                        * (1.0 + libm::erf(u))
            }
        }
    }

    /// `d^k/dx^k` of the shape, `k >= 1`, exact.
    pub fn derivative(&self, x: f64, k: usize) -> f64 {
        assert!(k >= 1);
        match self {
            Shape::Constant(_) => 0.0,
            Shape::Bump(b) => {
                let u = (x - b.center) / b.width;
                b.amplitude * gaussian_derivative(u, k) / b.width.powi(k as i32)
            }
            Shape::Step(s) => {
                let u = (x - s.center) / s.width;
                s.amplitude * gaussian_derivative(u, k - 1) / s.width.powi(k as i32 - 1)
            }
        }
    }

    pub fn limit_at_infinity(&self) -> f64 {
        match self {
            Shape::Constant(c) => *c,
            Shape::Bump(_) => 0.0,
            Shape::Step(s) => s.base + s.amplitude * s.width * std::f64::consts::PI.sqrt(),
        }
    }
}

/// A finite sum of shapes; still has exact derivatives.
#[derive(Debug, Clone)]
pub struct AnalyticCurve {
    pub shapes: Vec<Shape>,
}

impl AnalyticCurve {
    pub fn new(shapes: Vec<Shape>) -> Self {
        Self { shapes }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![Shape::Constant(c)])
    }

    pub fn bump(center: f64, width: f64, amplitude: f64) -> Self {
        Self::new(vec![Shape::Bump(GaussianBump { center, width, amplitude })])
    }

    pub fn step(center: f64, width: f64, amplitude: f64, base: f64) -> Self {
        Self::new(vec![Shape::Step(GaussianStep { center, width, amplitude, base })])
    }

    pub fn value(&self, x: f64) -> f64 {
        self.shapes.iter().map(|s| s.value(x)).sum()
    }

    pub fn derivative(&self, x: f64, k: usize) -> f64 {
        self.shapes.iter().map(|s| s.derivative(x, k)).sum()
    }

    pub fn limit_at_infinity(&self) -> f64 {
        self.shapes.iter().map(|s| s.limit_at_infinity()).sum()
    }

    pub fn to_grid(&self, spec: GridSpec) -> GridFunction {
        GridFunction::from_fn(spec, |x| self.value(x), self.limit_at_infinity())
    }

    /// Grid samples of `d^k/dx^k`, `k >= 1`; the limit of any derivative is 0.
    pub fn derivative_grid(&self, spec: GridSpec, k: usize) -> GridFunction {
        GridFunction::from_fn(spec, |x| self.derivative(x, k), 0.0)
    }

    /// Exact generator powers `G^k` of the curve for `k = 1..=max_k`, with
    /// `G = A^2 - c I` expanded binomially over the analytic derivatives.
    pub fn generator_powers(
        &self,
        spec: GridSpec,
        kind: crate::semigroup::PerturbationKind,
        w: f64,
        max_k: usize,
    ) -> Vec<GridFunction> {
        let c = kind.spectral_shift(w);
        let mut out = Vec::with_capacity(max_k);
        for k in 1..=max_k {
            let mut acc = GridFunction::from_fn(spec, |_| 0.0, 0.0);
            let mut binom = 1.0_f64;
            for j in 0..=k {
                let coeff = binom * (-c).powi((k - j) as i32);
                if coeff != 0.0 {
                    let term = if j == 0 {
                        self.to_grid(spec)
                    } else {
                        self.derivative_grid(spec, 2 * j)
                    };
                    acc.add_scaled_mut(coeff, &term).expect("same grid");
                }
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
            out.push(acc);
        }
        out
    }
}
