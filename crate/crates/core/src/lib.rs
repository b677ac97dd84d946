//! Spectral knowledge distillation for 2D spatiotemporal forecasting.
//!
//! The crate bundles everything needed to run the experiment end to end on a
//! single machine:
//!
//! - [`dataset`]: pseudo-spectral Navier–Stokes and analytic wave generators,
//!   plus the on-disk dataset container.
//! - [`spectral`]: radial band masks, band splitting, energy spectra and
//!   band-resolved error decomposition.
//! - [`nn`]: a small reverse-mode compute core and the model zoo (a
//!   conv/attention teacher, a pure-conv teacher and three students).
//! - [`distill`]: task, frequency-aligned and activation-boundary losses, and
//!   the capped-simplex multi-teacher gradient weighting.
//! - [`train`]: teacher pretraining and student distillation loops.
//! - [`eval`]: metrics, spectral reports, inference benchmarks.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
