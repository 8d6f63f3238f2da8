//! Exact distributions, asymptotic classification, and Monte Carlo
//! diagnostics for a single cell of a contingency table with fixed
//! margins, modeled as independent coupon collectors.
//!
//! The pipeline: describe margins either concretely ([`model::MarginVector`],
//! [`model::MarginTable`]) or as symbolic sequences of `n`
//! ([`model::GrowthSpec`]); compute the exact cell law and moments
//! ([`exact`]); classify the limiting regime — degenerate, one of three
//! Poisson forms, or normal — with explicit centering and scaling
//! ([`asymptotics`]); and back the classification with samplers
//! ([`sampler`]) and finite-`n` distance certificates ([`diagnostics`]).

pub mod asymptotics;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod model;
pub mod powersum;
pub mod sampler;

pub use error::{Error, Result};
