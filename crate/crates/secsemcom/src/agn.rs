//! Artificial-Gaussian-noise encryption for the unknown-eavesdropper
//! scenario: `x' = sqrt(u) x + sqrt(1-u) w` with `w ~ N(0, I)`, which keeps
//! unit transmit power for any allocation `u`.

use crate::encryptor::{EncryptionInfo, Encryptor};
use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Fraction of transmit power carried by the signal, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerAllocation(f64);

impl PowerAllocation {
    pub fn new(u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) || !u.is_finite() {
            return Err(Error::invalid(format!(
                "power allocation must lie in [0, 1], got {u}"
            )));
        }
        Ok(Self(u))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Mix the latent with fresh AGN; `w` is resampled for every block.
pub fn encrypt_agn(x: &Tensor, u: PowerAllocation, rng: &mut SeedRng) -> Result<Tensor> {
    let u = u.value();
    if u == 1.0 {
        return Ok(x.clone());
    }
    let (su, sw) = (u.sqrt(), (1.0 - u).sqrt());
    let mut out = x.scale(su);
    for v in out.data_mut() {
        *v += sw * rng.standard_normal();
    }
    Ok(out)
}

/// Per-dimension mean squared distortion between the channel input before and
/// after encryption.
pub fn covertness_mse(x: &Tensor, x_prime: &Tensor) -> Result<f64> {
    if x.shape() != x_prime.shape() {
        return Err(Error::Dimension {
            what: "covertness operands",
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    Ok(x
        .data()
        .iter()
        .zip(x_prime.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

/// Expected covertness MSE for unit-power input: `(1 - sqrt(u))^2 + (1 - u)`.
pub fn expected_covertness(u: f64) -> f64 {
    (1.0 - u.sqrt()).powi(2) + (1.0 - u)
}

/// [`Encryptor`] strategy wrapper around [`encrypt_agn`].
pub struct AgnEncryptor {
    u: PowerAllocation,
}

impl AgnEncryptor {
    pub fn new(u: PowerAllocation) -> Self {
        Self { u }
    }

    pub fn u(&self) -> f64 {
        self.u.value()
    }
}

impl Encryptor for AgnEncryptor {
    fn name(&self) -> &'static str {
        "agn"
    }

    fn encrypt(&self, x: &Tensor, rng: &mut SeedRng) -> Result<(Tensor, EncryptionInfo)> {
        let x_prime = encrypt_agn(x, self.u, rng)?;
        Ok((x_prime, EncryptionInfo::Agn { u: self.u.value() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semcom::{normalize_power, PowerNorm};

    fn unit_power_block(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = SeedRng::from_seed(seed);
        let x = crate::rng::gaussian(&mut rng, rows, cols, 0.0, 1.0).unwrap();
        normalize_power(&x, PowerNorm::PerBatch)
    }

    #[test]
    fn u_one_is_identity() {
        let x = unit_power_block(4, 23, 0);
        let mut rng = SeedRng::from_seed(1);
        let y = encrypt_agn(&x, PowerAllocation::new(1.0).unwrap(), &mut rng).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn out_of_range_u_rejected() {
        assert!(PowerAllocation::new(-0.01).is_err());
        assert!(PowerAllocation::new(1.01).is_err());
        assert!(PowerAllocation::new(f64::NAN).is_err());
    }

    #[test]
    fn transmit_power_conserved_for_all_u() {
        // E[mean(x'^2)] = u * 1 + (1 - u) = 1; Monte Carlo within 1%.
        let x = unit_power_block(100, 23, 2);
        let mut rng = SeedRng::from_seed(3);
        for &u in &[0.0, 0.25, 0.5, 0.9] {
            let mut acc = 0.0;
            let reps = 50;
            for _ in 0..reps {
                let y = encrypt_agn(&x, PowerAllocation::new(u).unwrap(), &mut rng).unwrap();
                acc += y.mean_square();
            }
            let power = acc / reps as f64;
            assert!((power - 1.0).abs() < 0.01, "u={u}: power {power}");
        }
    }

    #[test]
    fn covertness_matches_closed_form_across_u_grid() {
        let x = unit_power_block(200, 23, 4);
        let mut rng = SeedRng::from_seed(5);
        for k in 0..=10 {
            let u = k as f64 / 10.0;
            let mut acc = 0.0;
            let reps = 25;
            for _ in 0..reps {
                let y = encrypt_agn(&x, PowerAllocation::new(u).unwrap(), &mut rng).unwrap();
                acc += covertness_mse(&x, &y).unwrap();
            }
            let mc = acc / reps as f64;
            let expect = expected_covertness(u);
            if expect > 0.0 {
                assert!(
                    (mc - expect).abs() <= 0.02 * expect.max(0.05),
                    "u={u}: mc {mc} vs analytic {expect}"
                );
            } else {
                assert_eq!(mc, 0.0);
            }
        }
    }

    #[test]
    fn covertness_upper_bound_at_zero_u() {
        // All power on AGN: expected distortion is 2 per dimension.
        assert!((expected_covertness(0.0) - 2.0).abs() < 1e-12);
        let x = unit_power_block(500, 23, 6);
        let mut rng = SeedRng::from_seed(7);
        let y = encrypt_agn(&x, PowerAllocation::new(0.0).unwrap(), &mut rng).unwrap();
        let mc = covertness_mse(&x, &y).unwrap();
        assert!((mc - 2.0).abs() < 0.04, "mc {mc}");
    }

    #[test]
    fn expected_covertness_strictly_decreasing_in_u() {
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let v = expected_covertness(k as f64 / 100.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn covertness_zero_iff_equal() {
        let x = unit_power_block(2, 23, 8);
        assert_eq!(covertness_mse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::zeros(2, 3);
        let y = Tensor::zeros(2, 4);
        assert!(covertness_mse(&x, &y).is_err());
    }
}
