//! Adversarial text generation with soft-text and latent-code critics.
//!
//! The models share one LSTM autoencoder. Its softmax reconstruction of a
//! sentence (the soft-text `x̃`) and its normalized latent code `c` serve as
//! the "real" side for Wasserstein critics, while the decoder (fed with noise
//! or with the output of a code generator) produces the "fake" side. The
//! IWGAN, AAE and ARAE baselines are built from the same parts.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod demo;
pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod toy;
pub mod training;

pub use config::{Group, ModelKind, TrainingConfig};
pub use error::{Error, Result};
pub use model::ModelState;
