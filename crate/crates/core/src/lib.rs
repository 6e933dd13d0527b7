//! Exact state probabilities for generalized (fractional) birth processes.
//!
//! A generalized birth process jumps from state `n` to `n + i` with rate
//! `λ(n, i)`, `1 ≤ i ≤ k`. Its fractional variant replaces the time
//! derivative in the forward equations by a Caputo derivative of order
//! `α ∈ (0, 1]`, optionally with a different order per state.
//!
//! The crate is organised as:
//!
//! - [`rates`]: rate models, named presets and the non-explosion series.
//! - [`combinat`]: jump patterns, epoch sets and the compositions indexing
//!   the inverse Laplace series.
//! - [`special`]: Mittag-Leffler function and inverse Laplace kernels.
//! - [`pmf`]: analytic state probabilities and their Laplace transforms.
//! - [`oracle`]: fractional ODE solver, numerical Laplace transform and
//!   Caputo residuals used as independent ground truth.
//! - [`simulate`]: exact path simulation, the Brownian time change at
//!   `α = 1/2`, and empirical pmf estimation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinat;
pub mod error;
pub mod expr;
pub mod oracle;
pub mod pmf;
pub mod quad;
pub mod rates;
pub mod simulate;
pub mod special;
pub mod table;

pub use error::{Error, Result};
pub use pmf::{OrderSpec, PerStateOrders};
pub use rates::{JumpBound, RateModel};
pub use table::PmfTable;

/// A computed value together with a bound on its absolute error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error_bound: f64,
}

impl Estimate {
    pub fn new(value: f64, error_bound: f64) -> Self {
        Estimate { value, error_bound }
    }

    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            error_bound: 0.0,
        }
    }
}
