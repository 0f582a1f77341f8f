//! BEAR: a residual autoencoder built from convolutional LSTMs that read an
//! image's channels as a sequence, together with the pieces needed to train
//! it and to analyse its latent space.
//!
//! The crate carries its own small tensor and reverse-mode autodiff engine
//! ([`autodiff`]), the reusable network blocks ([`nn`]), the assembled model
//! ([`model`]), the optimisation loop ([`train`]), latent-space tools
//! ([`latent`]) and the file formats and commands behind the `bear` binary.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod image;
pub mod latent;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
