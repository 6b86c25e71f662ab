//! Best mean-squared-error prediction in structural errors-in-variables
//! regression.
//!
//! When a covariate `ξ` is only observed through a surrogate `x = ξ + δ`, the
//! best predictor of a new response is `E[y | z, x]`, and for Gaussian `ξ` and
//! `δ` that regression often stays inside the original parametric family with
//! transformed coefficients. Fitting that family by ordinary (or nonlinear)
//! least squares on the observed `(z, x)` therefore estimates the best
//! predictor consistently, even though the fitted coefficients are biased for
//! the latent ones.
//!
//! Modules:
//!
//! - [`linalg`]: pseudo-inverse, symmetric square root, semidefinite Cholesky
//! - [`models`]: model families, validation and seeded samplers
//! - [`transform`]: latent → observable regression parameters
//! - [`estimators`]: sample moments, OLS and nonlinear least squares
//! - [`predictors`]: individual/mean predictors and confidence regions
//! - [`oracle`]: quadrature and simulation references for `E[y | x]`
//! - [`montecarlo`]: consistency, coverage and comparison experiments
//! - [`io`]: dataset CSV/JSON files and fixed-precision JSON output

pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod models;
pub mod montecarlo;
pub mod optimizer;
pub mod oracle;
pub mod predictors;
pub mod rng;
pub mod special;
pub mod transform;

pub use error::{Error, Result};
