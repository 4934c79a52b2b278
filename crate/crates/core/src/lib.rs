//! Deep Koopman latent models of quadrotor dynamics and the model predictive
//! controller built on them.
//!
//! - [`dataset`]: flight records, CSV I/O, min-max normalisation, triples
//! - [`nnet`]: tensors, MLPs, reverse-mode gradients, Adam, spectral radius
//! - [`koopman`]: encoder/decoder with linear latent dynamics and its training
//! - [`mpc`]: condensed box-constrained QP and the latent-space controller
//! - [`plant`]: rigid-body quadrotor simulator, data generation, NMPC baseline
//! - [`bench`]: experiment harness, metrics, and the `dkmpc` command line

// NaN-rejecting checks are written as `!(a < b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dataset;
pub mod error;
pub mod koopman;
pub mod mpc;
pub mod nnet;
pub mod parallel;
pub mod plant;

pub use error::{Error, Result};
pub use parallel::Execution;
