//! Diffusion-based decryption: noise schedule, noise-estimation network
//! (NENN), SNR-matched timestep selection, and the single-step reverse
//! estimate that strips artificial noise plus channel noise from the
//! received block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encryptor::EncryptionInfo;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, frozen_on_tape, init_mlp, mlp_forward, mlp_forward_on_tape, Activation, AdamState,
    FloatDtype, MlpSpec, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Variance schedule tables, indexed by 1-based timestep `t in 1..=T`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp; the canonical choice is `linear(1000, 1e-4, 0.02)`.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        let betas = (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|&b| !(0.0..1.0).contains(&b) || b == 0.0) {
            return Err(Error::invalid("all beta values must lie in (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        // t = 1 has no predecessor; the formula would give 0, the usual
        // convention substitutes beta(1).
        let posterior_var: Vec<f64> = (0..beta.len())
            .map(|i| {
                if i == 0 {
                    beta[0]
                } else {
                    (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i]
                }
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `beta_tilde(t) = (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t)`;
    /// `t = 1` returns `beta(1)` by convention.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_var[self.check_t(t)?])
    }

    /// Forward-process SNR `alpha_bar(t) / (1 - alpha_bar(t))`.
    pub fn snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ab / (1.0 - ab)
    }
}

/// One Markov diffusion step `x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) e`.
pub fn forward_step(
    x_prev: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeedRng,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let (sa, sb) = ((1.0 - sched.beta(t)).sqrt(), sched.beta(t).sqrt());
    let mut out = x_prev.scale(sa);
    for v in out.data_mut() {
        *v += sb * rng.standard_normal();
    }
    Ok(out)
}

/// Jump straight to step `t` by reparameterization; returns the noised block
/// and the exact standard-normal draw used (the NENN's regression target).
pub fn forward_sample(
    x0: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeedRng,
) -> Result<(Tensor, Tensor)> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (sa, se) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = crate::rng::gaussian(rng, x0.rows(), x0.cols(), 0.0, 1.0)?;
    let mut x_t = x0.scale(sa);
    for (v, e) in x_t.data_mut().iter_mut().zip(eps.data()) {
        *v += se * e;
    }
    Ok((x_t, eps))
}

/// Reverse-posterior mean given the noise that produced `x_t`.
pub fn posterior_mean(x_t: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if x_t.shape() != eps.shape() {
        return Err(Error::Dimension {
            what: "posterior_mean operands",
            expected: x_t.len(),
            got: eps.len(),
        });
    }
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(x_t.sub(&eps.scale(coef)).scale(1.0 / a.sqrt()))
}

/// Timestep whose forward-process SNR best matches `snr_effective`; ties and
/// out-of-range targets resolve toward the schedule ends (smaller `t` wins).
pub fn match_timestep(snr_effective: f64, sched: &NoiseSchedule) -> usize {
    let mut best_t = 1;
    let mut best = f64::INFINITY;
    for t in 1..=sched.len() {
        let d = (snr_effective - sched.snr(t)).powi(2);
        if d < best {
            best = d;
            best_t = t;
        }
    }
    best_t
}

// --- NENN --------------------------------------------------------------------

/// Noise-estimation network: 4 fully connected layers of 128 with sinusoidal
/// time embeddings added to the first three pre-activations.
#[derive(Debug, Clone)]
pub struct NennModel {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl NennModel {
    pub fn spec_for(latent_len: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            vec![latent_len, 128, 128, 128, latent_len],
            vec![
                Activation::Relu,
                Activation::Relu,
                Activation::Relu,
                Activation::None,
            ],
        )?
        .with_time_embedding(vec![true, true, true, false])
    }

    pub fn init(latent_len: usize, rng: &mut SeedRng) -> Result<Self> {
        let spec = Self::spec_for(latent_len)?;
        let params = init_mlp(&spec, rng)?;
        Ok(Self { spec, params })
    }

    pub fn latent_len(&self) -> usize {
        self.spec.input_width()
    }

    /// Predicted noise for a batch at per-row timesteps.
    pub fn predict(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        mlp_forward(&self.spec, &self.params, x_t, Some(t))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NennConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for NennConfig {
    fn default() -> Self {
        Self {
            t_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            lr: 1e-3,
            batch_size: 500,
            epochs: 100,
        }
    }
}

/// Average `||eps - f(x_t, t)||^2` per sample over a latent set.
pub fn nenn_loss(
    model: &NennModel,
    latents: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut SeedRng,
) -> Result<f64> {
    let n = latents.rows();
    let ts: Vec<usize> = (0..n).map(|_| 1 + rng.below(sched.len())).collect();
    let mut x_t = Tensor::zeros(n, latents.cols());
    let mut eps = Tensor::zeros(n, latents.cols());
    for r in 0..n {
        let ab = sched.alpha_bar(ts[r]);
        let (sa, se) = (ab.sqrt(), (1.0 - ab).sqrt());
        for c in 0..latents.cols() {
            let e = rng.standard_normal();
            eps.set(r, c, e);
            x_t.set(r, c, sa * latents.get(r, c) + se * e);
        }
    }
    let pred = model.predict(&x_t, &ts)?;
    let mut acc = 0.0;
    for (p, e) in pred.data().iter().zip(eps.data()) {
        acc += (p - e) * (p - e);
    }
    Ok(acc / n as f64)
}

/// Train the NENN on transmitter latents: per sample draw `t` uniform in
/// `1..=T`, noise the latent by reparameterization, regress the noise.
///
/// The learning rate steps down (x0.3, then x0.1 of the base) at 55% and 80%
/// of the epoch budget. Returns the model and per-epoch training loss.
pub fn train_nenn(
    latents: &Tensor,
    sched: &NoiseSchedule,
    config: &NennConfig,
    rng: &mut SeedRng,
) -> Result<(NennModel, Vec<f64>)> {
    if latents.rows() == 0 {
        return Err(Error::invalid("latent dataset is empty"));
    }
    let mut model = NennModel::init(latents.cols(), rng)?;
    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(config.epochs);
    let decay1 = (config.epochs as f64 * 0.55) as usize;
    let decay2 = (config.epochs as f64 * 0.80) as usize;

    for epoch in 0..config.epochs {
        let lr = if epoch >= decay2 {
            config.lr * 0.1
        } else if epoch >= decay1 {
            config.lr * 0.3
        } else {
            config.lr
        };
        let order = rng.permutation(latents.rows());
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(sched.len())).collect();
            let mut x_t = Tensor::zeros(b, latents.cols());
            let mut eps = Tensor::zeros(b, latents.cols());
            for (r, &i) in chunk.iter().enumerate() {
                let ab = sched.alpha_bar(ts[r]);
                let (sa, se) = (ab.sqrt(), (1.0 - ab).sqrt());
                for c in 0..latents.cols() {
                    let e = rng.standard_normal();
                    eps.set(r, c, e);
                    x_t.set(r, c, sa * latents.get(i, c) + se * e);
                }
            }
            let mut tape = Tape::new();
            let vars = crate::nn::params_on_tape(&mut tape, &model.spec, &model.params);
            let input = tape.constant(x_t);
            let pred = mlp_forward_on_tape(&mut tape, &model.spec, &vars, input, Some(&ts))?;
            // mean over entries x L_t = per-sample squared norm
            let mse = tape.mse(pred, &eps);
            let loss = tape.scale(mse, latents.cols() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("NENN loss diverged: {value}")));
            }
            epoch_loss += value * b as f64;
            let grads = tape.backward(loss);
            let g = crate::nn::collect_grads(&tape, &grads, &model.spec, &vars);
            adam_step(&mut model.params, &g, &mut adam, lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
        }
        history.push(epoch_loss / latents.rows() as f64);
    }
    Ok((model, history))
}

// --- decryptor ----------------------------------------------------------------

/// The receiver-side pluggable module: schedule plus trained NENN.
#[derive(Debug, Clone)]
pub struct DdpmDecryptor {
    pub sched: NoiseSchedule,
    pub nenn: NennModel,
}

/// Effective signal-to-residual ratio of the normalized received block.
fn effective_snr(info: &EncryptionInfo, sigma2_bob: f64) -> Result<f64> {
    let snr = match *info {
        EncryptionInfo::Identity => {
            if sigma2_bob == 0.0 {
                f64::INFINITY
            } else {
                1.0 / sigma2_bob
            }
        }
        EncryptionInfo::Agn { u } => {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::invalid(format!("side info u={u} outside [0, 1]")));
            }
            let denom = 1.0 - u + sigma2_bob;
            if denom == 0.0 {
                f64::INFINITY
            } else {
                u / denom
            }
        }
        EncryptionInfo::Arn { delta_power } => {
            if delta_power < 0.0 {
                return Err(Error::invalid(format!(
                    "side info delta_power={delta_power} must be >= 0"
                )));
            }
            let denom = delta_power + sigma2_bob;
            if denom == 0.0 {
                f64::INFINITY
            } else {
                1.0 / denom
            }
        }
    };
    Ok(snr)
}

fn normalization(info: &EncryptionInfo, sigma2_bob: f64) -> f64 {
    match *info {
        EncryptionInfo::Identity | EncryptionInfo::Agn { .. } => (1.0 + sigma2_bob).sqrt(),
        EncryptionInfo::Arn { delta_power } => (1.0 + delta_power + sigma2_bob).sqrt(),
    }
}

impl DdpmDecryptor {
    pub fn new(sched: NoiseSchedule, nenn: NennModel) -> Self {
        Self { sched, nenn }
    }

    /// Timestep the decryptor will use for this side information.
    pub fn matched_timestep(&self, info: &EncryptionInfo, sigma2_bob: f64) -> Result<usize> {
        Ok(match_timestep(effective_snr(info, sigma2_bob)?, &self.sched))
    }

    /// Single-step reverse estimate:
    /// `x_hat = (y_bar - sqrt(1 - alpha_bar(t)) f(y_bar, t)) / sqrt(alpha_bar(t))`.
    pub fn decrypt(&self, y_bob: &Tensor, info: &EncryptionInfo, sigma2_bob: f64) -> Result<Tensor> {
        if sigma2_bob < 0.0 {
            return Err(Error::invalid("sigma2_bob must be >= 0"));
        }
        let t = self.matched_timestep(info, sigma2_bob)?;
        let y_bar = y_bob.scale(1.0 / normalization(info, sigma2_bob));
        let ts = vec![t; y_bar.rows()];
        let eps_hat = self.nenn.predict(&y_bar, &ts)?;
        let ab = self.sched.alpha_bar(t);
        Ok(y_bar
            .sub(&eps_hat.scale((1.0 - ab).sqrt()))
            .scale(1.0 / ab.sqrt()))
    }

    /// Ablation path: ancestral sampling from the matched step down to 0
    /// using the reverse-posterior mean and variance.
    pub fn decrypt_iterative(
        &self,
        y_bob: &Tensor,
        info: &EncryptionInfo,
        sigma2_bob: f64,
        rng: &mut SeedRng,
    ) -> Result<Tensor> {
        let t_hat = self.matched_timestep(info, sigma2_bob)?;
        let mut x = y_bob.scale(1.0 / normalization(info, sigma2_bob));
        for t in (2..=t_hat).rev() {
            let ts = vec![t; x.rows()];
            let eps_hat = self.nenn.predict(&x, &ts)?;
            let mean = posterior_mean(&x, &eps_hat, t, &self.sched)?;
            let std = self.sched.posterior_variance(t)?.sqrt();
            let z = crate::rng::gaussian(rng, x.rows(), x.cols(), 0.0, 1.0)?;
            x = mean.add(&z.scale(std));
        }
        let ts = vec![1; x.rows()];
        let eps_hat = self.nenn.predict(&x, &ts)?;
        let ab = self.sched.alpha_bar(1);
        Ok(x.sub(&eps_hat.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt()))
    }

    /// Record the single-step estimate on a tape with the NENN frozen, for
    /// losses that differentiate through the decryptor. `y_bar` must already
    /// be normalized; `t` is held fixed.
    pub fn single_step_on_tape(&self, tape: &mut Tape, y_bar: Var, t: usize) -> Result<Var> {
        self.sched.check_t(t)?;
        let vars = frozen_on_tape(tape, &self.nenn.spec, &self.nenn.params);
        let ts = vec![t; tape.value(y_bar).rows()];
        let eps_hat = mlp_forward_on_tape(tape, &self.nenn.spec, &vars, y_bar, Some(&ts))?;
        let ab = self.sched.alpha_bar(t);
        let scaled = tape.scale(eps_hat, (1.0 - ab).sqrt());
        let diff = tape.sub(y_bar, scaled);
        Ok(tape.scale(diff, 1.0 / ab.sqrt()))
    }
}

// --- checkpoint ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NennMeta {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub latent_len: usize,
    pub seed: u64,
}

pub fn save_nenn(dir: &Path, decryptor: &DdpmDecryptor, meta: &NennMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::write_param_set(
        &dir.join("nenn.pset"),
        &decryptor.nenn.spec,
        &decryptor.nenn.params,
        FloatDtype::F64,
    )?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_nenn(dir: &Path) -> Result<(DdpmDecryptor, NennMeta)> {
    let path = dir.join("meta.json");
    let text =
        std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
    let meta: NennMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad meta.json: {e}")))?;
    let (spec, params) = crate::nn::read_param_set(&dir.join("nenn.pset"))?;
    let sched = NoiseSchedule::linear(meta.t_steps, meta.beta_start, meta.beta_end)?;
    Ok((DdpmDecryptor::new(sched, NennModel { spec, params }), meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn schedule_identities_hold() {
        let s = sched();
        assert_eq!(s.len(), 1000);
        let mut prev_ab = 1.0;
        for t in 1..=s.len() {
            assert!((s.alpha(t) - (1.0 - s.beta(t))).abs() < 1e-15);
            assert!((s.alpha_bar(t) - prev_ab * s.alpha(t)).abs() < 1e-15);
            assert!(s.alpha_bar(t) < prev_ab, "alpha_bar not strictly decreasing");
            let pv = s.posterior_variance(t).unwrap();
            assert!(pv > 0.0 && pv <= s.beta(t) + 1e-15);
            prev_ab = s.alpha_bar(t);
        }
        assert!(s.alpha_bar(s.len()) < 0.01, "alpha_bar(T) = {}", s.alpha_bar(s.len()));
    }

    #[test]
    fn posterior_variance_hand_case() {
        // beta = (0.1, 0.2, 0.3), t = 2: (1 - 0.9) / (1 - 0.72) * 0.2
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap();
        assert_abs_diff_eq!(
            s.posterior_variance(2).unwrap(),
            0.1 / 0.28 * 0.2,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(s.posterior_variance(2).unwrap(), 0.0714286, epsilon = 1e-6);
        // t = 1 falls back to beta(1)
        assert_abs_diff_eq!(s.posterior_variance(1).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn invalid_betas_rejected() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
    }

    #[test]
    fn forward_sample_inverts_algebraically() {
        let s = sched();
        let mut rng = SeedRng::from_seed(1);
        let x0 = crate::rng::gaussian(&mut rng, 3, 23, 0.0, 1.0).unwrap();
        for &t in &[1, 250, 999] {
            let (x_t, eps) = forward_sample(&x0, t, &s, &mut rng).unwrap();
            let ab = s.alpha_bar(t);
            let rec = x_t.sub(&eps.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt());
            for (a, b) in rec.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-9, "t={t}");
            }
        }
    }

    #[test]
    fn forward_sample_zero_input_variance_matches() {
        let s = sched();
        let mut rng = SeedRng::from_seed(2);
        let x0 = Tensor::zeros(400, 250);
        let t = 500;
        let (x_t, _) = forward_sample(&x0, t, &s, &mut rng).unwrap();
        let target = 1.0 - s.alpha_bar(t);
        let var = x_t.mean_square();
        assert!((var - target).abs() < 0.02 * target, "var {var} vs {target}");
    }

    #[test]
    fn iterated_steps_match_reparameterized_moments() {
        // Iterating t = 1..T' and jumping straight to T' agree in mean/variance.
        let s = sched();
        let mut rng = SeedRng::from_seed(3);
        let t_end = 300;
        let x0 = Tensor::filled(200, 50, 0.7);
        let mut x = x0.clone();
        for t in 1..=t_end {
            x = forward_step(&x, t, &s, &mut rng).unwrap();
        }
        let ab = s.alpha_bar(t_end);
        let mean = x.mean();
        let var = x.mean_square() - mean * mean;
        assert!((mean - ab.sqrt() * 0.7).abs() < 0.01, "mean {mean}");
        assert!((var - (1.0 - ab)).abs() < 0.02, "var {var} vs {}", 1.0 - ab);
    }

    #[test]
    fn timestep_out_of_range_rejected() {
        let s = sched();
        let mut rng = SeedRng::from_seed(0);
        let x = Tensor::zeros(1, 23);
        assert!(forward_step(&x, 0, &s, &mut rng).is_err());
        assert!(forward_step(&x, 1001, &s, &mut rng).is_err());
        assert!(forward_sample(&x, 1001, &s, &mut rng).is_err());
    }

    #[test]
    fn posterior_mean_with_zero_noise() {
        let s = sched();
        let x_t = Tensor::row(&[1.0, -2.0]);
        let eps = Tensor::zeros(1, 2);
        let m = posterior_mean(&x_t, &eps, 10, &s).unwrap();
        let expect = 1.0 / s.alpha(10).sqrt();
        assert_abs_diff_eq!(m.get(0, 0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), -2.0 * expect, epsilon = 1e-12);
    }

    #[test]
    fn match_timestep_exact_and_clamped() {
        let s = sched();
        let t_star = 417;
        assert_eq!(match_timestep(s.snr(t_star), &s), t_star);
        assert_eq!(match_timestep(f64::INFINITY, &s), 1);
        assert_eq!(match_timestep(1e12, &s), 1);
        assert_eq!(match_timestep(0.0, &s), s.len());
        assert_eq!(match_timestep(1e-12, &s), s.len());
    }

    #[test]
    fn matched_timestep_snr_is_within_grid_resolution() {
        // the effective SNR of the normalized received block lands between
        // the forward-process SNRs of the neighboring schedule steps
        let s = sched();
        for &(u, s2b) in &[(0.6, 0.316), (0.2, 0.1), (0.9, 1.0)] {
            let snr_eff = u / (1.0 - u + s2b);
            let t = match_timestep(snr_eff, &s);
            let upper = if t > 1 { s.snr(t - 1) } else { f64::INFINITY };
            let lower = if t < s.len() { s.snr(t + 1) } else { 0.0 };
            assert!(
                (lower..=upper).contains(&snr_eff),
                "snr {snr_eff} not bracketed by steps around t={t}"
            );
        }
    }

    #[test]
    fn match_timestep_monotone_in_snr() {
        let s = sched();
        let mut prev_t = usize::MAX;
        for k in 0..60 {
            let snr = 10f64.powf(-3.0 + 0.1 * k as f64);
            let t = match_timestep(snr, &s);
            assert!(t <= prev_t, "snr {snr}: t {t} > prev {prev_t}");
            prev_t = t;
        }
    }

    #[test]
    fn oracle_denoiser_recovers_exactly() {
        // With the true eps substituted for the NENN output, the single-step
        // rule inverts forward_sample exactly.
        let s = sched();
        let mut rng = SeedRng::from_seed(4);
        let x0 = crate::rng::gaussian(&mut rng, 2, 23, 0.0, 1.0).unwrap();
        for &t in &[50, 400, 900] {
            let (x_t, eps) = forward_sample(&x0, t, &s, &mut rng).unwrap();
            let ab = s.alpha_bar(t);
            let rec = x_t.sub(&eps.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt());
            for (a, b) in rec.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn decrypt_checks_side_info() {
        let mut rng = SeedRng::from_seed(0);
        let nenn = NennModel::init(23, &mut rng).unwrap();
        let d = DdpmDecryptor::new(sched(), nenn);
        let y = Tensor::zeros(1, 23);
        assert!(d.decrypt(&y, &EncryptionInfo::Agn { u: 1.5 }, 0.1).is_err());
        assert!(d
            .decrypt(&y, &EncryptionInfo::Arn { delta_power: -0.1 }, 0.1)
            .is_err());
        assert!(d.decrypt(&y, &EncryptionInfo::Agn { u: 0.5 }, 0.1).is_ok());
    }

    #[test]
    fn tape_single_step_matches_plain_decrypt() {
        let mut rng = SeedRng::from_seed(8);
        let nenn = NennModel::init(23, &mut rng).unwrap();
        let d = DdpmDecryptor::new(sched(), nenn);
        let y = crate::rng::gaussian(&mut rng, 4, 23, 0.0, 1.2).unwrap();
        let info = EncryptionInfo::Agn { u: 0.6 };
        let s2b = 0.3;
        let plain = d.decrypt(&y, &info, s2b).unwrap();

        let t = d.matched_timestep(&info, s2b).unwrap();
        let mut tape = Tape::new();
        let y_bar = tape.constant(y.scale(1.0 / (1.0f64 + s2b).sqrt()));
        let out = d.single_step_on_tape(&mut tape, y_bar, t).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nenn_training_beats_zero_predictor() {
        // Zero predictor loss is E||eps||^2 = L_t; a briefly trained NENN on
        // structured latents must do better than 0.8 of that.
        let mut rng = SeedRng::from_seed(5);
        let raw = crate::rng::gaussian(&mut rng, 1000, 23, 0.0, 1.0).unwrap();
        let latents = crate::semcom::normalize_power(&raw, crate::semcom::PowerNorm::PerBatch);
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let config = NennConfig {
            epochs: 50,
            batch_size: 250,
            ..NennConfig::default()
        };
        let (model, history) = train_nenn(&latents, &s, &config, &mut rng).unwrap();
        let holdout_raw = crate::rng::gaussian(&mut rng, 400, 23, 0.0, 1.0).unwrap();
        let holdout = crate::semcom::normalize_power(&holdout_raw, crate::semcom::PowerNorm::PerBatch);
        let loss = nenn_loss(&model, &holdout, &s, &mut rng).unwrap();
        assert!(!history.is_empty());
        assert!(loss < 0.8 * 23.0, "held-out loss {loss}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = SeedRng::from_seed(6);
        let nenn = NennModel::init(23, &mut rng).unwrap();
        let d = DdpmDecryptor::new(sched(), nenn);
        let dir = tempfile::tempdir().unwrap();
        let meta = NennMeta {
            t_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            latent_len: 23,
            seed: 6,
        };
        save_nenn(dir.path(), &d, &meta).unwrap();
        let (loaded, meta2) = load_nenn(dir.path()).unwrap();
        assert_eq!(meta2.t_steps, 1000);
        let y = crate::rng::gaussian(&mut rng, 2, 23, 0.0, 1.0).unwrap();
        let info = EncryptionInfo::Agn { u: 0.4 };
        assert_eq!(
            d.decrypt(&y, &info, 0.2).unwrap().data(),
            loaded.decrypt(&y, &info, 0.2).unwrap().data()
        );
    }
}
