//! Spectral α-Rényi divergences between spectral densities and robust
//! minimum-divergence estimation of parametric spectral models.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: frequency grids, tabulated spectra, quadrature and the
//!   innovation variance.
//! * [`models`]: differentiable parametric spectral families (AR(1), Brune
//!   with attenuation) exposing value, log-gradient and log-Hessian.
//! * [`sampling`]: exact Gaussian simulation, periodograms, modified Daniell
//!   smoothing and frequency-domain contamination.
//! * [`divergence`]: discrete and quadrature Rényi / Itakura–Saito
//!   divergences, variational representations, finite-n Gaussian oracles and
//!   contamination shifts.
//! * [`optimize`]: objectives, gradients, Hessians, fixed-step and Armijo
//!   gradient descent, path metrics.
//! * [`experiments`]: the configuration-driven Monte Carlo harness.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
