//! Core algorithms for fast accuracy-change evaluation under incremental learning.
//!
//! When a deployed classifier is retrained on newly acquired data, its accuracy on
//! everything it was evaluated on before may silently drop. Re-testing the whole
//! accumulated dataset after every update gets slower as that dataset grows. This
//! crate implements the alternative: before an update, cache a single per-class
//! gradient aggregate over the accumulated dataset; after the update, combine it
//! with the parameter delta in one dot product whose cost depends only on the
//! parameter count, and map the resulting score to a predicted accuracy change
//! through a per-class linear regression calibrated on past updates.
//!
//! The crate is `no_std`-compatible (`alloc` required) and fully deterministic:
//! transcendental functions go through `libm`, all randomness flows through the
//! documented generator in [`rng`], and every summation has a fixed order, so
//! identical seeds give bit-identical results across platforms and runs.
//!
//! Modules:
//!
//! - [`nn`]: minimal dense feedforward classifier with softmax output,
//!   cross-entropy, exact backpropagation, and canonical parameter flattening.
//! - [`train`]: deterministic mini-batch SGD producing checkpoint sequences.
//! - [`estimator`]: positive/negative losses, their gradients, the per-class
//!   gradient-sum aggregate, and the constant-time effect score.
//! - [`regressor`]: quartile-fence outlier filtering, ordinary least squares,
//!   and effect-to-accuracy-change prediction.
//! - [`dataset`]: labeled examples and seeded Gaussian-cluster generation.
//! - [`rng`]: the documented deterministic generator behind everything above.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod nn;
pub mod regressor;
pub mod rng;
pub mod train;

pub use dataset::{Dataset, LabeledExample, SyntheticSpec};
pub use error::{Error, Result};
pub use estimator::{ClassPartition, GradSumRecord, PathTag};
pub use nn::{MlpNetwork, ParamVector, Prediction};
pub use regressor::{EfSample, RegressionModel};
pub use rng::Stream;
pub use train::{Checkpoint, TrainConfig};
