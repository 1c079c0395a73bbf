//! Density-functional weight regularization (DFReg) with a small,
//! deterministic training engine and the diagnostics used to study it.
//!
//! * [`nn`], [`optim`], [`schedule`], [`gradcheck`]: explicit forward/backward
//!   layers, optimizers, learning-rate schedule and finite-difference checks.
//! * [`density`]: weight histograms, the `Σ ρᵢ²` penalty and its gradient, entropy.
//! * [`spectral`]: filter spectra of convolution kernels.
//! * [`data`], [`model`], [`checkpoint`]: datasets, the desk-scale CNN and its on-disk format.
//! * [`harness`], [`plot`]: training runs, comparisons, analysis and SVG charts.

pub mod checkpoint;
pub mod data;
pub mod density;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod plot;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamKind, Parameter, ParameterSet};
pub use rng::Rng;
pub use tensor::Tensor;
