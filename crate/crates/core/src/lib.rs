//! Numerical core for autoregressive forecasting on spherical lat-lon grids.
//!
//! Everything here is a pure function of its inputs: grid geometry and
//! quadrature, solar zenith angle, dataset windows, losses and metrics,
//! input perturbations, a small reverse-mode autodiff tape, the UNet and
//! Graph UNet models, rollouts and the training loops. File formats, the
//! CLI and experiment orchestration live in the `gridcast` crate.
//!
//! The crate is `no_std` and only needs `alloc`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod dataset;
mod error;
pub mod forecast;
mod math;
pub mod models;
pub mod objectives;
pub mod perturb;
pub mod rng;
pub mod sphere;
pub mod tensor;
pub mod training;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
