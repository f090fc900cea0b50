//! Bayesian inference for flexible linear mixed models: scale-mixture-of-normal
//! and two-piece residual errors, arbitrary proper random-effects laws,
//! improper location/scale priors, posterior-propriety verification, adaptive
//! Metropolis-within-Gibbs sampling with censoring, and Bayes-factor / LPML
//! model selection.

pub mod dist;
pub mod error;
pub mod likelihood;
pub mod io;
pub mod model;
pub mod numeric;
pub mod priors;
pub mod propriety;
pub mod sampler;
pub mod selection;
pub mod sim;
pub mod simplex;

pub use error::{Error, Result};
