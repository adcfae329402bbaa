//! Recovery of modulo-folded multichannel signals.
//!
//! A sample `x` observed through a folding ADC is stored as
//! `p = x mod λ`; recovering `x` means recovering the integer fold count
//! `z` with `x = λz + p`. This crate provides the folding algebra,
//! spatio-temporal graphs over windows of multichannel recordings,
//! [`UnwrapNet`] (a graph-attention fold-count classifier with
//! pre-estimation guided feature injection), classical unwrapping
//! baselines, and the training/evaluation pipeline around them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used by the CLI.

// Negated comparisons are how NaN gets rejected in argument checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod data;
pub mod graph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod train;

pub use model::UnwrapNet;
pub use scalar::Scalar;

pub type Real = f64;
pub type Net = UnwrapNet<Real>;
pub type RealDataset = data::Dataset<Real>;
pub type RealWindow = signal::FoldedWindow<Real>;
