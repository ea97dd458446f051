//! Full waveform inversion with a neural-network scaling field.
//!
//! The unknown material scaling `gamma(x)` of a 2D specimen is produced by a
//! small encoder-decoder network from the measured sensor traces. The network
//! weights are driven by adjoint-method gradients of the measurement misfit,
//! optionally starting from weights pretrained on labelled synthetic data.

pub mod adjoint;
mod binio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod field;
pub mod inversion;
pub mod metrics;
pub mod nn;
pub mod solver;

pub use error::{Error, Result};
