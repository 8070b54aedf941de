//! Gradient-guided amplitude and pixel space augmentation, with the pieces
//! needed to study it end to end: a small reverse-mode autodiff engine, 2-D
//! Fourier analysis, tiny classifiers, procedural multi-domain benchmarks,
//! LP-FT training, an ablation driver and a connectivity estimator.

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod connectivity;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
