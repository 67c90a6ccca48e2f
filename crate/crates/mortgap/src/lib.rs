//! Age-period count models for the gap between two mortality series.
//!
//! The crate ingests death counts for two populations (or two causes of
//! death) on a shared age-group x calendar-year grid, fits three count
//! models to the evolution of the gap between them, projects the fitted
//! period effects forward with a random walk with drift, and scores the
//! resulting gap forecasts:
//!
//! * independent Poisson models for the two count series ("double Poisson"),
//! * a bivariate Poisson model with a common shock capturing positive
//!   dependence between the series, fitted by EM,
//! * a Skellam (Poisson-difference) model fitted directly to the signed
//!   gap counts by quasi-Newton maximum likelihood.
//!
//! All three share the same log-linear age-period predictor with a
//! reference-cell parameterisation, so their information criteria and
//! forecast errors are directly comparable.

pub mod design;
pub mod dist;
pub mod error;
pub mod eval;
pub mod fit;
pub mod forecast;
pub mod grid;
pub mod panel;
pub mod sim;

pub use error::{Error, Result};
pub use grid::Grid;
