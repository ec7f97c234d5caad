//! Finite-difference stencils on uniform grids.
//!
//! Weights come from Fornberg's recursion, so any derivative order and any
//! (possibly one-sided) node set is available. The public entry points fix
//! the accuracy at order four: wide enough for the perturbation experiments,
//! narrow enough that boundary stencils stay inside an `n >= 8` grid for the
//! orders that matter.

use crate::{Result, SpdeError};

/// Highest derivative order served by [`differentiate`].
pub const MAX_DERIVATIVE_ORDER: usize = 8;

/// Weights for the `m`-th derivative at `z` from the nodes `x`.
///
/// Straight implementation of Fornberg's algorithm; exact up to rounding
/// for any node distribution with `x.len() > m`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0_f64; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = ((x[i] - z) * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = (x[i] - z) * c[0][j] / c3;
        }
        c1 = c2;
    }
    c[m].clone()
}

/// Interior half-width giving fourth-order accuracy for derivative order `m`
/// on a symmetric stencil.
pub(crate) fn central_half_width(m: usize) -> usize {
    (m + 3) / 2
}

/// Stencil table for one derivative order: central interior weights plus
/// offset stencils for every boundary row.
pub(crate) struct DerivativeStencil {
    pub order: usize,
    pub half_width: usize,
    /// Central weights, length `2*half_width + 1`, in units of `dx^-order`.
    pub central: Vec<f64>,
    /// `boundary[i]` = weights on nodes `0..width` evaluated at node `i`,
    /// for `i < half_width`; the right boundary uses the mirror image.
    pub boundary: Vec<Vec<f64>>,
}

impl DerivativeStencil {
    pub fn new(order: usize, n: usize) -> Result<Self> {
        if order == 0 || order > MAX_DERIVATIVE_ORDER {
            return Err(SpdeError::Unsupported(format!(
                "derivative order {order} outside the stencil table (1..={MAX_DERIVATIVE_ORDER})"
            )));
        }
        let half_width = central_half_width(order);
        let boundary_width = order + 4;
        if n < boundary_width || n < 2 * half_width + 1 {
            return Err(SpdeError::Unsupported(format!(
                "grid with {n} points too coarse for order-{order} stencils"
            )));
        }
        let central_nodes: Vec<f64> = (-(half_width as i64)..=half_width as i64)
            .map(|k| k as f64)
            .collect();
        let central = fornberg_weights(0.0, &central_nodes, order);
        let one_sided: Vec<f64> = (0..boundary_width).map(|k| k as f64).collect();
        let boundary = (0..half_width)
            .map(|i| fornberg_weights(i as f64, &one_sided, order))
            .collect();
        Ok(Self { order, half_width, central, boundary })
    }

    /// Apply the stencil to `values`, dividing by `dx^order`.
    ///
    /// Every row is centered on its own sample (`sum w_j (v_j - v_i)`, exact
    /// because derivative weights sum to zero): the cancellation roundoff
    /// then scales with the local variation instead of the absolute level,
    /// which matters wherever the exponential weight amplifies noise.
    pub fn apply(&self, values: &[f64], dx: f64) -> Vec<f64> {
        let n = values.len();
        let p = self.half_width;
        let scale = dx.powi(-(self.order as i32));
        let mut out = vec![0.0; n];
        for i in 0..p.min(n) {
            let mut acc = 0.0;
            for (j, w) in self.boundary[i].iter().enumerate() {
                acc += w * (values[j] - values[i]);
            }
            out[i] = acc * scale;
        }
        for i in p..n.saturating_sub(p) {
            let mut acc = 0.0;
            for (k, w) in self.central.iter().enumerate() {
                acc += w * (values[i - p + k] - values[i]);
            }
            out[i] = acc * scale;
        }
        // Right boundary by mirror symmetry: weights reverse, sign flips for
        // odd derivative orders.
        let sign = if self.order % 2 == 0 { 1.0 } else { -1.0 };
        for i in n.saturating_sub(p)..n {
            let mirror = n - 1 - i;
            let mut acc = 0.0;
            for (j, w) in self.boundary[mirror].iter().enumerate() {
                acc += w * (values[n - 1 - j] - values[i]);
            }
            out[i] = sign * acc * scale;
        }
        out
    }
}

/// Fourth-order-accurate derivative of samples on a uniform grid.
pub fn differentiate(values: &[f64], dx: f64, order: usize) -> Result<Vec<f64>> {
    let st = DerivativeStencil::new(order, values.len())?;
    Ok(st.apply(values, dx))
}

/// Cell integrals of the cubic interpolant: fourth-order building block for
/// cumulative integration. Returns `n - 1` cell values.
fn cell_integrals(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 4, "cumulative integration needs at least 4 points");
    let mut cells = Vec::with_capacity(n - 1);
    // First cell: one-sided cubic through nodes 0..4.
    cells.push(dx * (9.0 * values[0] + 19.0 * values[1] - 5.0 * values[2] + values[3]) / 24.0);
    for j in 1..n - 2 {
        cells.push(
            dx * (-values[j - 1] + 13.0 * values[j] + 13.0 * values[j + 1] - values[j + 2]) / 24.0,
        );
    }
    cells.push(
        dx * (values[n - 4] - 5.0 * values[n - 3] + 19.0 * values[n - 2] + 9.0 * values[n - 1])
            / 24.0,
    );
    cells
}

/// Cumulative integral anchored at grid index `anchor`:
/// `out[i] = integral from x[anchor] to x[i]`, fourth order.
///
/// Accumulated outward from the anchor in both directions, so near the
/// anchor the roundoff scales with the local integral rather than with the
/// total mass (subtracting a global running sum would leave noise that
/// high-order stencils under the exponential weight then amplify).
pub fn cumulative_integral(values: &[f64], dx: f64, anchor: usize) -> Vec<f64> {
    let n = values.len();
    let cells = cell_integrals(values, dx);
    let mut out = vec![0.0; n];
    for j in anchor..n - 1 {
        out[j + 1] = out[j] + cells[j];
    }
    for j in (0..anchor).rev() {
        out[j] = out[j + 1] - cells[j];
    }
    out
}

/// Composite trapezoid rule over all samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        acc += v;
    }
    acc * dx
}

/// Cumulative trapezoid anchored at index `anchor` (second order; used where
/// the trapezoid convention is part of the contract). Accumulated outward
/// from the anchor, as in [`cumulative_integral`].
pub fn cumulative_trapezoid(values: &[f64], dx: f64, anchor: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for j in anchor..n - 1 {
        out[j + 1] = out[j] + 0.5 * dx * (values[j] + values[j + 1]);
    }
    for j in (0..anchor).rev() {
        out[j] = out[j + 1] - 0.5 * dx * (values[j] + values[j + 1]);
    }
    out
}

/// Cubic (4-point) interpolation of uniformly sampled data at point `x`,
/// with `x` in grid coordinates (`x = i` is sample `i`). Clamps the stencil
/// at the ends.
pub fn interpolate_cubic(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    assert!(n >= 4);
    let mut base = x.floor() as i64 - 1;
    base = base.clamp(0, n as i64 - 4);
    let b = base as usize;
    let t = x - base as f64;
    // Lagrange cubic on offsets 0, 1, 2, 3.
    let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
    let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
    let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
    let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
    l0 * values[b] + l1 * values[b + 1] + l2 * values[b + 2] + l3 * values[b + 3]
}

/// Quintic (6-point) Lagrange interpolation at grid coordinate `x`. The
/// extension operator multiplies interpolated values by large reflection
/// coefficients, which the sixth-order error absorbs.
pub fn interpolate_quintic(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    assert!(n >= 6);
    let mut base = x.floor() as i64 - 2;
    base = base.clamp(0, n as i64 - 6);
    let b = base as usize;
    let t = x - base as f64;
    let mut acc = 0.0;
    for k in 0..6usize {
        let mut l = 1.0;
        for j in 0..6usize {
            if j != k {
                l *= (t - j as f64) / (k as f64 - j as f64);
            }
        }
        acc += l * values[b + k];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_fourth_order_weights() {
        let nodes: Vec<f64> = (-2..=2).map(|k| k as f64).collect();
        let d1 = fornberg_weights(0.0, &nodes, 1);
        let expect1 = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in d1.iter().zip(expect1.iter()) {
            assert!((a - b).abs() < 1e-13, "D1 weight {a} vs {b}");
        }
        let d2 = fornberg_weights(0.0, &nodes, 2);
        let expect2 = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for (a, b) in d2.iter().zip(expect2.iter()) {
            assert!((a - b).abs() < 1e-12, "D2 weight {a} vs {b}");
        }
    }

    #[test]
    fn derivative_of_sine_is_fourth_order() {
        let mut errs = Vec::new();
        for &n in &[101usize, 201] {
            let dx = 2.0 / (n - 1) as f64;
            let xs: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * dx).collect();
            let f: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
            let df = differentiate(&f, dx, 1).unwrap();
            let err = xs
                .iter()
                .zip(df.iter())
                .map(|(x, d)| (d - x.cos()).abs())
                .fold(0.0_f64, f64::max);
            errs.push(err);
        }
        // Halving dx should cut the error by about 16.
        assert!(errs[0] / errs[1] > 10.0, "convergence ratio {}", errs[0] / errs[1]);
        assert!(errs[1] < 1e-7);
    }

    #[test]
    fn high_order_derivatives_of_polynomials_are_exact() {
        // d^4/dx^4 of x^5 = 120 x; stencils of order 4 reproduce degree-7
        // polynomials exactly, so the only error is rounding.
        let n = 64;
        let dx = 0.25;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx - 4.0).collect();
        let f: Vec<f64> = xs.iter().map(|x| x.powi(5)).collect();
        let d4 = differentiate(&f, dx, 4).unwrap();
        for (x, d) in xs.iter().zip(d4.iter()) {
            assert!((d - 120.0 * x).abs() < 1e-6, "at x={x}: {d}");
        }
    }

    #[test]
    fn unsupported_order_rejected() {
        let f = vec![0.0; 32];
        assert!(matches!(
            differentiate(&f, 0.1, 9),
            Err(SpdeError::Unsupported(_))
        ));
    }

    #[test]
    fn cumulative_integral_exact_on_cubics() {
        let n = 40;
        let dx = 0.1;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
        let f: Vec<f64> = xs.iter().map(|x| 2.0 * x.powi(3) - x + 0.5).collect();
        let exact = |x: f64| 0.5 * x.powi(4) - 0.5 * x * x + 0.5 * x;
        let cum = cumulative_integral(&f, dx, 0);
        for (x, c) in xs.iter().zip(cum.iter()) {
            assert!((c - exact(*x)).abs() < 1e-12, "at x={x}: {c}");
        }
    }

    #[test]
    fn cumulative_integral_fourth_order_on_exponential() {
        let mut errs = Vec::new();
        for &n in &[201usize, 401] {
            let dx = 4.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|i| (-(i as f64) * dx).exp()).collect();
            let cum = cumulative_integral(&f, dx, 0);
            let err = (0..n)
                .map(|i| {
                    let x = i as f64 * dx;
                    (cum[i] - (1.0 - (-x).exp())).abs()
                })
                .fold(0.0_f64, f64::max);
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 12.0, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics() {
        let values: Vec<f64> = (0..12).map(|i| {
            let x = i as f64;
            x * x * x - 2.0 * x + 1.0
        }).collect();
        for k in 0..50 {
            let x = 0.2 + k as f64 * 0.21;
            let exact = x * x * x - 2.0 * x + 1.0;
            assert!((interpolate_cubic(&values, x) - exact).abs() < 1e-10);
        }
    }
}
