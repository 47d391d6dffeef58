//! Desk-scale laboratory for drift-correction watermarking of VP diffusion
//! samplers.
//!
//! A closed-form Gaussian-mixture score oracle stands in for a trained
//! denoiser, so every quantity along a sampling trajectory can be checked
//! against exact algebra. On top of it sit the noise-prediction injection,
//! several reverse samplers, a payload codec, a linear autoencoder, an
//! attack catalogue and an evaluation harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod codec;
pub mod error;
pub mod eval;
pub mod injection;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod vae;

pub use error::{Error, Result};
