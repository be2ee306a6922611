//! Time-embedded algorithm unrolling for regularized least-squares inverse
//! problems under a multi-coil Cartesian MRI forward model.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`]: complex images, k-space, masks, coil maps and the encoding
//!   operator `E = M F S`.
//! - [`linops`]: linear maps, conjugate gradient and trace estimators.
//! - [`prox`]: analytic proximal operators with exact divergences.
//! - [`vamp`]: vector approximate message passing with Onsager corrections.
//! - [`unroll`]: VSQP, ADMM and the time-embedded unrolled engines.
//! - [`nn`]: a small reverse-mode autodiff tape and the FiLM-conditioned
//!   proximal networks.
//! - [`train`]: end-to-end training of unrolled models.
//! - [`metrics`]: PSNR, SSIM and NMSE.
//! - [`ktn`]: the KTN1 tensor file format.

pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod ktn;
pub mod linops;
pub mod metrics;
pub mod nn;
pub mod prox;
pub mod signal;
pub mod train;
pub mod unroll;
pub mod vamp;

pub use error::{Error, Result};
pub use num_complex::Complex64;
