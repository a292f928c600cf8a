//! Discrete infinite logistic normal (DILN) topic model.
//!
//! Topics carry latent locations; each document has its own location, and a
//! topic's prior weight in the document is modulated by a Gaussian-process
//! kernel between the two. The crate provides the generative sampler, batch
//! and stochastic mean-field variational inference, held-out evaluation and
//! the exports behind the `diln` binary.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod export;
pub mod generative;
pub mod linalg;
pub mod mat;
pub mod model;
pub mod rng;
pub mod special;
pub mod stochastic;
pub mod vb;

pub use error::{Error, Result};
