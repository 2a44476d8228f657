//! Differentially private adversarial training with certified robustness.
//!
//! The mechanism trains a small auto-encoder plus classifier under pure
//! epsilon-differential privacy by perturbing objective-function
//! coefficients with a single draw of Laplace noise, crafts ensemble
//! adversarial examples from already-perturbed inputs during training, and
//! certifies per-example robustness radii at inference time by composing
//! the DP guarantees of the input and hidden randomization layers.
//!
//! Module map:
//! - [`data`] — IDX ingestion, signed normalization, fixed disjoint batches
//! - [`noise`] — seeded Laplace draws and inference noise streams
//! - [`nn`] — dense encoder/classifier with exact gradients and checkpoints
//! - [`objective`] — sensitivities, perturbed losses, privacy accountant
//! - [`attack`] — FGSM / I-FGSM / MIM / Madry-PGD and the ensemble crafter
//! - [`train`] — sequential trainer and the parameter-server trainer
//! - [`certify`] — Monte-Carlo bounds and the certified radius search
//! - [`metrics`] — conventional and certified accuracy
//! - [`config`] / [`cli`] — run configuration and command entry points
//!
//! Run `cargo run --example train_sequential` for a minimal end-to-end
//! walkthrough; the `examples/` directory holds one runnable example per
//! capability.

pub mod attack;
pub mod certify;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod objective;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
