//! Probabilistic deep models for WiFi-fingerprint indoor positioning.
//!
//! * [`cmdrnn`]: a convolutional mixture-density recurrent network that
//!   predicts a user's next position from a window of RSSI fingerprints.
//! * [`vae`]: a variational autoencoder trained on all fingerprints, with a
//!   deterministic (M1) or stochastic (M2) position predictor trained on the
//!   labeled subset.
//!
//! Both are built on a small reverse-mode autodiff engine ([`autodiff`]) and
//! layer catalogue ([`layers`]), with the data pipeline ([`data`]) and
//! evaluation harness ([`eval`]) needed to run the experiments.

pub mod autodiff;
pub mod checkpoint;
pub mod cmdrnn;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod mdn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::Tensor;
