//! Secure semantic communication over AWGN links with pluggable
//! encryption/decryption modules.
//!
//! The library reproduces a desk-scale secure image-transmission system:
//!
//! - [`semcom`]: the baseline semantic transceiver (encoder, joint
//!   source-channel coding, decoder) trained end-to-end with MSE.
//! - [`encryptor`]: the strategy interfaces; encryption modules and the
//!   diffusion decryptor register by name and are selected at runtime.
//! - [`agn`]: artificial-Gaussian-noise encryption with power split `u`.
//! - [`arn`]: adversarial-residual-network encryption against a known
//!   eavesdropper.
//! - [`ddpm`]: the diffusion schedule, noise-estimation network and
//!   SNR-matched single-step decryption.
//! - [`mi`]: Monte-Carlo upper bound on the privacy-leakage mutual
//!   information.
//! - [`ddpg`]: actor-critic power allocation plus the exhaustive-search
//!   baseline.
//! - [`eve`]: the eavesdropping classifier and its metrics.
//! - [`sweep`], [`metrics`], [`plot`]: experiment orchestration, CSV
//!   persistence and figure emission.

pub mod agn;
pub mod arn;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod ddpg;
pub mod ddpm;
pub mod encryptor;
pub mod error;
pub mod eve;
pub mod metrics;
pub mod mi;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod semcom;
pub mod sweep;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeedRng;
pub use tensor::Tensor;
