//! Numerical library for linear stochastic evolution equations
//! `du = (A + eps*G) u dt + alpha dt + B dW` on exponentially weighted
//! function spaces, where `A` is the left-shift generator and `G` a
//! second-order (parabolic) perturbation.
//!
//! The crate provides
//! - weighted grid spaces with norms, derivatives and half-line restriction
//!   ([`space`]),
//! - the shift and heat semigroups, their products, resolvents and
//!   structural checks ([`semigroup`]),
//! - reproducible Monte Carlo drivers for stochastic convolutions
//!   ([`stochastic`]),
//! - asymptotic expansions `u_eps = u + sum eps^k v_k / k! + R` with
//!   empirical and theoretical remainder control ([`expansion`]),
//! - expansions of functionals of the solution ([`functionals`]),
//! - the Musiela forward-rate equation, bond pricing and arbitrage
//!   diagnostics under a parabolic perturbation ([`musiela`]).

pub mod curves;
pub mod expansion;
pub mod functionals;
pub mod musiela;
pub mod samples;
pub mod semigroup;
pub mod space;
pub mod stencil;
pub mod stochastic;

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpdeError {
    /// Two grid functions (or a function and a space) do not share a grid.
    #[error("structural mismatch: {0}")]
    Structural(String),
    /// A computation produced non-finite values or lost all significance.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A time or shift argument is not aligned with the grid.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// Requested order/feature outside the supported tables.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Coercivity condition of a weak solve violated.
    #[error("coercivity violated: {0}")]
    Coercivity(String),
    /// Slope/limit undefined because the data is degenerate.
    #[error("undefined slope: {0}")]
    UndefinedSlope(String),
    /// Input/output failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SpdeError>;

impl From<std::io::Error> for SpdeError {
    fn from(e: std::io::Error) -> Self {
        SpdeError::Io(e.to_string())
    }
}
