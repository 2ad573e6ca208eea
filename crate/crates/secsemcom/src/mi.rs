//! Monte-Carlo estimator of the privacy-leakage mutual-information upper
//! bound over the eavesdropper link.
//!
//! For the AGN-encrypted signal, `y = sqrt(u) x + e` with
//! `e ~ N(0, (sigma_e^2 + 1 - u) I)`, so the conditional density of the
//! received block given the clean latent is closed-form Gaussian. The bound
//! is the joint expectation of its log minus the product-of-marginals
//! expectation, both estimated from one batch of joint pairs (all N^2 cross
//! pairs are used for the second expectation). Values are in nats per block.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// `log p(y | x)` for the effective Gaussian eavesdropper channel.
pub fn log_cond_density(y: &[f64], x: &[f64], u: f64, sigma2_e: f64) -> Result<f64> {
    if y.len() != x.len() {
        return Err(Error::Dimension {
            what: "log_cond_density operands",
            expected: x.len(),
            got: y.len(),
        });
    }
    let sigma2_eff = sigma2_e + 1.0 - u;
    if sigma2_eff <= 0.0 {
        return Err(Error::invalid(format!(
            "effective variance must be positive, got {sigma2_eff}"
        )));
    }
    let l = y.len() as f64;
    let su = u.sqrt();
    let quad: f64 = y
        .iter()
        .zip(x)
        .map(|(yi, xi)| {
            let d = yi - su * xi;
            d * d
        })
        .sum();
    Ok(-(l / 2.0) * (TAU * sigma2_eff).ln() - quad / (2.0 * sigma2_eff))
}

/// Estimate with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct MiEstimate {
    pub nats: f64,
    pub std_error: f64,
}

/// Upper bound on `I(x; y_eve)` from jointly drawn `(x_i, y_i)` rows:
/// `(1/N) sum_i log p(y_i|x_i) - (1/N^2) sum_i sum_j log p(y_j|x_i)`.
///
/// The standard error comes from the per-`i` contributions
/// `a_i = log p(y_i|x_i) - mean_j log p(y_j|x_i)`.
pub fn mi_upper_bound(x: &Tensor, y: &Tensor, u: f64, sigma2_e: f64) -> Result<MiEstimate> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension {
            what: "mi_upper_bound operands",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("mutual-information batch needs N >= 2"));
    }
    let sigma2_eff = sigma2_e + 1.0 - u;
    if sigma2_eff <= 0.0 {
        return Err(Error::invalid(format!(
            "effective variance must be positive, got {sigma2_eff}"
        )));
    }
    let l = x.cols();
    let su = u.sqrt();
    let log_const = -(l as f64 / 2.0) * (TAU * sigma2_eff).ln();
    let inv_two_var = 1.0 / (2.0 * sigma2_eff);

    // ||y_j - sqrt(u) x_i||^2 = |y_j|^2 - 2 sqrt(u) <x_i, y_j> + u |x_i|^2
    let y_norms: Vec<f64> = (0..n)
        .map(|j| y.row_slice(j).iter().map(|v| v * v).sum())
        .collect();
    let x_norms: Vec<f64> = (0..n)
        .map(|i| x.row_slice(i).iter().map(|v| v * v).sum())
        .collect();
    let y_norm_mean = y_norms.iter().sum::<f64>() / n as f64;
    // mean over j of y_j, once; the cross term only needs <x_i, sum_j y_j>.
    let mut y_mean = vec![0.0; l];
    for j in 0..n {
        for (acc, v) in y_mean.iter_mut().zip(y.row_slice(j)) {
            *acc += v / n as f64;
        }
    }

    let mut contributions = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row_slice(i);
        let yi = y.row_slice(i);
        let diag_quad: f64 = yi
            .iter()
            .zip(xi)
            .map(|(yv, xv)| {
                let d = yv - su * xv;
                d * d
            })
            .sum();
        let joint = log_const - diag_quad * inv_two_var;
        let dot_mean: f64 = xi.iter().zip(&y_mean).map(|(a, b)| a * b).sum();
        let cross_quad = y_norm_mean - 2.0 * su * dot_mean + u * x_norms[i];
        let cross = log_const - cross_quad * inv_two_var;
        contributions.push(joint - cross);
    }

    let nats = contributions.iter().sum::<f64>() / n as f64;
    let var = contributions
        .iter()
        .map(|a| (a - nats) * (a - nats))
        .sum::<f64>()
        / (n as f64 - 1.0);
    Ok(MiEstimate {
        nats,
        std_error: (var / n as f64).sqrt(),
    })
}

/// Closed-form bound for a standard-normal surrogate source: `u L / sigma2_eff`.
pub fn analytic_bound_gaussian_source(u: f64, sigma2_e: f64, block_len: usize) -> f64 {
    u * block_len as f64 / (sigma2_e + 1.0 - u)
}

/// True mutual information of the Gaussian surrogate channel:
/// `(L/2) ln(1 + u / sigma2_eff)`.
pub fn true_mi_gaussian_source(u: f64, sigma2_e: f64, block_len: usize) -> f64 {
    (block_len as f64 / 2.0) * (1.0 + u / (sigma2_e + 1.0 - u)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use approx::assert_abs_diff_eq;

    fn joint_pairs(n: usize, u: f64, sigma2_e: f64, seed: u64) -> (Tensor, Tensor) {
        let mut rng = SeedRng::from_seed(seed);
        let x = crate::rng::gaussian(&mut rng, n, 23, 0.0, 1.0).unwrap();
        let sigma_eff = (sigma2_e + 1.0 - u).sqrt();
        let mut y = x.scale(u.sqrt());
        for v in y.data_mut() {
            *v += sigma_eff * rng.standard_normal();
        }
        (x, y)
    }

    #[test]
    fn log_density_hand_value() {
        // y = sqrt(u) x: value is -(L/2) ln(2 pi sigma_eff^2); with L = 23,
        // u = 0.5, sigma_e^2 = 0.5 the effective variance is 1.
        let x: Vec<f64> = (0..23).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5f64.sqrt()).collect();
        let v = log_cond_density(&y, &x, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(v, -(23.0 / 2.0) * TAU.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(v, -21.1350, epsilon = 1e-3);
    }

    #[test]
    fn log_density_shift_and_symmetry() {
        let x = vec![0.0; 23];
        let at = log_cond_density(&x, &x, 0.5, 0.5).unwrap();
        // shifting y by ||delta||^2 = 2 sigma_eff^2 lowers the value by 1
        let mut y = x.clone();
        y[0] = (2.0f64).sqrt(); // sigma_eff^2 = 1
        let shifted = log_cond_density(&y, &x, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(at - shifted, 1.0, epsilon = 1e-12);
        // sign symmetry
        let mut y_neg = x.clone();
        y_neg[0] = -(2.0f64).sqrt();
        assert_abs_diff_eq!(
            shifted,
            log_cond_density(&y_neg, &x, 0.5, 0.5).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn nonpositive_effective_variance_rejected() {
        let x = vec![0.0; 4];
        assert!(log_cond_density(&x, &x, 1.0, 0.0).is_err());
    }

    #[test]
    fn batch_of_one_rejected() {
        let x = Tensor::zeros(1, 23);
        assert!(mi_upper_bound(&x, &x, 0.5, 0.5).is_err());
    }

    #[test]
    fn estimate_vanishes_at_zero_u() {
        // x drops out of the density, so joint and cross terms cancel exactly.
        let (x, y) = joint_pairs(512, 0.0, 0.5, 1);
        let est = mi_upper_bound(&x, &y, 0.0, 0.5).unwrap();
        assert!(est.nats.abs() <= (3.0 * est.std_error).max(1e-9), "{est:?}");
    }

    #[test]
    fn gaussian_surrogate_matches_analytic_bound() {
        let (u, s2e) = (0.5, 0.5);
        let (x, y) = joint_pairs(4096, u, s2e, 2);
        let est = mi_upper_bound(&x, &y, u, s2e).unwrap();
        let analytic = analytic_bound_gaussian_source(u, s2e, 23);
        assert_abs_diff_eq!(analytic, 11.5, epsilon = 1e-12);
        assert!(
            (est.nats - analytic).abs() <= 0.05 * analytic,
            "estimate {} vs analytic {analytic}",
            est.nats
        );
        // and sits above the true MI of the surrogate channel
        let true_mi = true_mi_gaussian_source(u, s2e, 23);
        assert_abs_diff_eq!(true_mi, 4.663, epsilon = 1e-3);
        assert!(est.nats >= true_mi - 3.0 * est.std_error);
    }

    #[test]
    fn leakage_vanishes_as_u_approaches_zero() {
        // bound at u = 1e-3 is below 1% of its value at u = 0.9
        let s2e = 0.5;
        let (x_lo, y_lo) = joint_pairs(4096, 1e-3, s2e, 4);
        let lo = mi_upper_bound(&x_lo, &y_lo, 1e-3, s2e).unwrap();
        let (x_hi, y_hi) = joint_pairs(4096, 0.9, s2e, 5);
        let hi = mi_upper_bound(&x_hi, &y_hi, 0.9, s2e).unwrap();
        assert!(
            lo.nats.abs() < 0.01 * hi.nats,
            "MI at u=1e-3 is {} vs {} at u=0.9",
            lo.nats,
            hi.nats
        );
    }

    #[test]
    fn estimates_nondecreasing_in_u() {
        let s2e = 0.5;
        let mut prev = f64::NEG_INFINITY;
        let mut prev_se = 0.0;
        for k in 1..=9 {
            let u = k as f64 / 10.0;
            let (x, y) = joint_pairs(2048, u, s2e, 3);
            let est = mi_upper_bound(&x, &y, u, s2e).unwrap();
            assert!(
                est.nats >= prev - 3.0 * (est.std_error + prev_se),
                "u={u}: {} below previous {prev}",
                est.nats
            );
            prev = est.nats;
            prev_se = est.std_error;
        }
    }
}
