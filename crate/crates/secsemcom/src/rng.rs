//! Seeded random number generation.
//!
//! All stochastic code in this crate draws from [`SeedRng`] so that a run is
//! fully determined by its seed. Independent streams for parallel workers are
//! derived with [`SeedRng::split`].

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Deterministic RNG stream: identical seed, identical draw sequence.
pub struct SeedRng {
    inner: ChaCha12Rng,
}

impl SeedRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream keyed by `index` without disturbing this
    /// stream's own state.
    pub fn split(&self, index: u64) -> Self {
        let mut key = self.inner.get_seed();
        for (i, b) in index.to_le_bytes().iter().enumerate() {
            key[i] ^= b.rotate_left(3);
            key[i + 8] ^= b;
        }
        Self {
            inner: ChaCha12Rng::from_seed(key),
        }
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// One standard-normal draw (Box-Muller, one value per call pair kept
    /// internally simple by discarding the second).
    pub fn standard_normal(&mut self) -> f64 {
        loop {
            let u1: f64 = self.inner.random::<f64>();
            if u1 > f64::MIN_POSITIVE {
                let u2: f64 = self.inner.random::<f64>();
                return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
    }

    /// Fisher-Yates shuffled index permutation.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.inner.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}

/// I.i.d. `N(mean, std^2)` tensor.
pub fn gaussian(rng: &mut SeedRng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::invalid(format!("gaussian std must be >= 0, got {std}")));
    }
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = mean + std * rng.standard_normal();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeedRng::from_seed(7);
        let mut b = SeedRng::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_f64().to_bits(), b.next_f64().to_bits());
        }
        let ga = gaussian(&mut a, 4, 5, 0.0, 1.0).unwrap();
        let gb = gaussian(&mut b, 4, 5, 0.0, 1.0).unwrap();
        assert_eq!(ga.data(), gb.data());
    }

    #[test]
    fn split_streams_differ_from_parent_and_each_other() {
        let root = SeedRng::from_seed(1);
        let mut s0 = root.split(0);
        let mut s1 = root.split(1);
        let a: Vec<f64> = (0..8).map(|_| s0.next_f64()).collect();
        let b: Vec<f64> = (0..8).map(|_| s1.next_f64()).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn gaussian_moments_million_draws() {
        let mut rng = SeedRng::from_seed(42);
        let t = gaussian(&mut rng, 1000, 1000, 0.0, 1.0).unwrap();
        let mean = t.mean();
        let var = t.mean_square() - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_zero_std_is_constant() {
        let mut rng = SeedRng::from_seed(0);
        let t = gaussian(&mut rng, 3, 3, 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gaussian_negative_std_rejected() {
        let mut rng = SeedRng::from_seed(0);
        assert!(gaussian(&mut rng, 1, 1, 0.0, -1.0).is_err());
    }
}
