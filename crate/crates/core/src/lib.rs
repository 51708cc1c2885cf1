//! Identifiable autoregressive variational autoencoder (iVAEar) for
//! nonlinear, nonstationary spatio-temporal blind source separation.
//!
//! The crate is organized bottom-up:
//!
//! - [`neuralnet`]: dense MLPs, a reverse-mode gradient tape and Adam.
//! - [`stfield`]: simulation of latent autoregressive Gaussian fields and
//!   MLP mixing functions.
//! - [`auxdata`]: auxiliary variables built from space-time coordinates.
//! - [`model`]: the iVAEar model, its ELBO, training and checkpoints.
//! - [`eval`]: MCC, MSE/wMSE and seasonal regression.
//! - [`forecast`]: multi-step latent AR rollouts decoded to observations.
//! - [`dataset`]: the spatio-temporal dataset type and its CSV format.

pub mod auxdata;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod linalg;
pub mod model;
pub mod neuralnet;
pub mod rng;
pub mod stfield;

pub use error::{Error, Result};
