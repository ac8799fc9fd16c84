//! Spectral generative flow models.
//!
//! Fields on a periodic box evolve under projected stochastic
//! Navier–Stokes-type dynamics, are represented in an orthonormal wavelet
//! basis, and are generated by score-based diffusion over the fine wavelet
//! scales with physics-guided corrections.

// NaN must fail validity checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod fft;
pub mod field;
pub mod flow;
pub mod io;
pub mod rng;
pub mod spectral;
pub mod training;
pub mod wavelet;

pub use error::{Result, SgfmError};
pub use field::{gaussian_field, l2_norm, make_grid, Field, Grid, Trajectory};
