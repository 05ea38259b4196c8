//! Task-oriented adversarial domain adaptation on a small reverse-mode
//! autodiff engine.
//!
//! - [`autodiff`]: tape, differentiable ops, gradient reversal, SGD.
//! - [`nets`]: feature extractor, classifier, domain discriminator.
//! - [`decompose`]: class-gradient attention, positive/negative features, heatmaps.
//! - [`train`]: schedules, domain losses, train step and loop for every method.
//! - [`data`]: seeded synthetic two-domain image datasets.

pub mod autodiff;
pub mod data;
pub mod decompose;
pub mod error;
pub mod nets;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
