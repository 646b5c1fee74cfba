//! Numerical laboratory for multivariate smoothing transforms
//! `R = C_1 R_1 + ... + C_N R_N + Q` (in law).
//!
//! * [`models`]: weight-vector families, sample pools and side conditions.
//! * [`wbp`]: population dynamics and truncated weighted branching recursion.
//! * [`spectral`]: `m(s)`, the exponents `alpha`/`beta` and the eigen-elements
//!   of the transfer operators on the sphere.
//! * [`tails`]: tail-index estimation and the limiting-constant formulas.
//! * [`io`]: staged atomic output, CSV/JSON formatting and sample dumps.
//! * [`cli`]: the batch front-end behind the `smoothlab` binary.

pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod tails;
pub mod wbp;

pub use error::{Error, Result};
