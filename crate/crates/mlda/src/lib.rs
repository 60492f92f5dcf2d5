//! Multilevel Delayed Acceptance (MLDA) MCMC with an on-line Adaptive Error
//! Model (AEM), plus the Darcy-flow benchmark problem it is validated on.
//!
//! Module map:
//! - [`kernel`]: single-level Metropolis-Hastings building blocks;
//! - [`hierarchy`]: the recursive MLDA sampler over a model hierarchy;
//! - [`aem`]: running Gaussian estimates of inter-level bias, telescoped
//!   into bias-corrected coarse likelihoods;
//! - [`darcy`]: nested-grid finite-volume Darcy solver, KL field
//!   parametrization, observation operator, synthetic data;
//! - [`diagnostics`]: rank-normalized ESS, split R-hat, acceptance rates.

pub mod aem;
pub mod darcy;
pub mod diagnostics;
pub mod error;
pub mod hierarchy;
pub mod kernel;

pub use error::{MldaError, Result};
