//! Rank aggregation for heterogeneous rankers.
//!
//! Each observed ranking list is modeled as the interleaving of two groups of
//! entities: a small set of *relevant* entities whose relative order follows a
//! Mallows model, and a *background* set whose placement relative to the
//! relevant ones follows a truncated power law. A per-ranker quality parameter
//! `gamma_k` scales both components, so unreliable rankers are discounted
//! automatically when the lists are aggregated.
//!
//! The crate provides:
//!
//! - [`rank`]: permutation primitives (Kendall tau distance, the
//!   relevant/background decomposition of a list and its inverse).
//! - [`model`]: exact log-likelihoods, normalizing constants, generative
//!   sampling, covariate and hierarchical priors.
//! - [`bayes`]: Metropolis-within-Gibbs posterior sampling and posterior
//!   summaries.
//! - [`mle`]: cyclic-coordinate (Gauss-Seidel) maximum likelihood, plus
//!   Monte Carlo EM for the hierarchical variant.
//! - [`partial`]: aggregation from partial lists via data augmentation and
//!   Monte Carlo EM over compatible completions.
//! - [`simulate`]: scenario generators, evaluation metrics, the moment
//!   estimator, and a seeded replicate benchmark harness.

pub mod bayes;
mod engine;
mod error;
pub mod mle;
pub mod model;
pub mod numeric;
pub mod partial;
pub mod rank;
pub mod seeds;
pub mod simulate;

pub use error::{Error, Result};
