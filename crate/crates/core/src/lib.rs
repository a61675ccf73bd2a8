//! Weight-perturbation training at desk scale.
//!
//! This crate implements and cross-checks training methods that perturb
//! network weights during optimization — DAMP (random multiplicative
//! Gaussian perturbations), DAAP (additive), SAM and ASAM (worst-case
//! perturbations), structured Bernoulli dropout, and corruption-augmented
//! SGD — on small feedforward ReLU networks, together with:
//!
//! - input corruption generators with 5 severity levels and a
//!   corruption-error benchmark harness,
//! - a numerical verification suite for the identities relating input
//!   corruptions to multiplicative weight perturbations,
//! - deterministic seeded data loading (IDX / CIFAR-10 binary / synthetic
//!   blobs) and bit-reproducible training runs.
//!
//! Everything is f64 and bit-reproducible given a root seed.

pub mod bench;
pub mod config;
pub mod corrupt;
pub mod error;
pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod network;
pub mod perturb;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
