//! Structured output regularization (SOR) for transfer learning and
//! structured pruning, built on a small deterministic CNN engine.
//!
//! - [`nn`]: tensors, layers, exact gradients, gradient checking, model files.
//! - [`sor`]: blocks, freezing, gates, penalties, pruning and assumption checks.
//! - [`optim`]: Adam, SGD, step schedules and the training loop.
//! - [`noisebox`]: the synthetic Noise-and-Box dataset.
//! - [`experiment`]: the two-stage protocol and the seeded experiment grid.

pub mod error;
pub mod experiment;
pub mod nn;
pub mod noisebox;
pub mod optim;
pub mod rng;
pub mod sor;
pub mod tensor;

pub use error::{Result, SorError};
pub use tensor::Tensor;
