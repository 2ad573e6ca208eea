//! AWGN channel simulation and SNR bookkeeping.
//!
//! Transmit power is normalized to 1 before any encryption module runs, so a
//! link SNR of `s` dB corresponds to a per-dimension noise variance of
//! `10^(-s/10)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Noise variances of the legitimate and eavesdropping links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub sigma2_bob: f64,
    pub sigma2_eve: f64,
    pub block_len: usize,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2_bob", self.sigma2_bob), ("sigma2_eve", self.sigma2_eve)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `y = x + n` with `n ~ N(0, sigma2 I)`.
pub fn awgn(x: &Tensor, sigma2: f64, rng: &mut SeedRng) -> Result<Tensor> {
    if !x.is_empty() && (!sigma2.is_finite() || sigma2 < 0.0) {
        return Err(Error::invalid(format!(
            "noise variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if sigma2 == 0.0 {
        return Ok(x.clone());
    }
    let std = sigma2.sqrt();
    let mut y = x.clone();
    for v in y.data_mut() {
        *v += std * rng.standard_normal();
    }
    Ok(y)
}

/// Per-dimension noise variance for a link SNR in dB (unit signal power).
pub fn snr_db_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Inverse of [`snr_db_to_sigma2`].
pub fn sigma2_to_snr_db(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}
