//! Discriminative normalizing flows as a deep generative form of LDA.
//!
//! A [`dnf::DnfModel`] pairs an invertible flow with a class-conditional
//! latent prior whose classes are unit-covariance Gaussians. With a single
//! linear block it is exactly maximum-likelihood LDA ([`lda`]); restricting
//! the class means to the first `p` latent coordinates gives subspace DNF,
//! a nonlinear dimension reduction.

pub mod checkpoint;
pub mod dataset;
pub mod datasim;
pub mod diffcore;
pub mod dnf;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod flows;
pub mod lda;
pub mod rng;
pub mod trainer;

pub use dataset::LabeledDataset;
pub use diffcore::Matrix;
pub use error::{Error, Result};
