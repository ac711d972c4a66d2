//! Conditional sampling by reverse-time probability-flow integration with an
//! exact score under a Gaussian-mixture prior.
//!
//! The pieces are layered: [`gmm_prior`] builds the prior and observation
//! model, [`score`] evaluates schedules, component weights, and scores,
//! [`reverse_ode`] integrates noise to posterior samples, [`amortized`] trains a
//! feed-forward sampler on those samples, [`eval`] compares densities, and
//! [`elliptic`] supplies the PDE inverse-problem workload.

pub mod amortized;
pub mod elliptic;
pub mod error;
pub mod eval;
pub mod gmm_prior;
pub mod math;
pub mod rng;
pub mod reverse_ode;
pub mod score;
pub mod synthetic;

pub use error::{EsdError, Result};
