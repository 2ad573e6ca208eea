//! Adversarial-residual-network encryption for the known-eavesdropper
//! scenario: a small DNN block generates a low-power perturbation
//! `delta = F(x)` added to the latent, trained end-to-end to keep the
//! legitimate reconstruction good (through the frozen diffusion decryptor),
//! drive Eve's true-class confidence down, and hinge-penalize perturbation
//! power above the budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Lambdas;
use crate::dataset::Dataset;
use crate::ddpm::DdpmDecryptor;
use crate::encryptor::{EncryptionInfo, Encryptor};
use crate::error::{Error, Result};
use crate::eve::EveClassifier;
use crate::nn::{
    adam_step, init_mlp, mlp_forward, mlp_forward_on_tape, zero_final_layer, Activation,
    AdamState, FloatDtype, MlpSpec, MlpVars, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::rng::SeedRng;
use crate::semcom::SemcomModel;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ArnModel {
    pub spec: MlpSpec,
    pub params: ParamSet,
    /// Power budget epsilon in the hinge term.
    pub epsilon: f64,
    /// Per-dimension E||delta||^2 / L_t measured on the training set after
    /// training; the decryptor's normalization and timestep match read this.
    pub measured_delta_power: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ArnConfig {
    pub hidden: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambdas: Lambdas,
    /// Per-batch noise variances are drawn from `U(0, bound)`.
    pub delta_sigma2_bob: f64,
    pub delta_sigma2_eve: f64,
}

impl Default for ArnConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epsilon: 0.1,
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            // Scenario II trades reconstruction against a robust classifier;
            // the privacy weight defaults higher than the Scenario-I reward.
            lambdas: Lambdas {
                com: 10.0,
                pri: 0.75,
                cov: 1.0,
            },
            delta_sigma2_bob: 3.1622776601683795,
            delta_sigma2_eve: 3.1622776601683795,
        }
    }
}

impl ArnModel {
    pub fn init(latent_len: usize, hidden: usize, epsilon: f64, rng: &mut SeedRng) -> Result<Self> {
        if epsilon < 0.0 {
            return Err(Error::invalid("power budget must be >= 0"));
        }
        let spec = MlpSpec::new(
            vec![latent_len, hidden, hidden, latent_len],
            vec![Activation::Relu, Activation::Relu, Activation::None],
        )?;
        let mut params = init_mlp(&spec, rng)?;
        // start from delta = 0 so the residual is the identity
        zero_final_layer(&spec, &mut params);
        Ok(Self {
            spec,
            params,
            epsilon,
            measured_delta_power: 0.0,
        })
    }

    pub fn latent_len(&self) -> usize {
        self.spec.input_width()
    }

    /// `x' = x + F(x)`; also returns the perturbation itself.
    pub fn perturb(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let delta = mlp_forward(&self.spec, &self.params, x, None)?;
        Ok((x.add(&delta), delta))
    }

    /// Per-dimension perturbation power over a latent batch.
    pub fn delta_power(&self, x: &Tensor) -> Result<f64> {
        let (_, delta) = self.perturb(x)?;
        Ok(delta.mean_square())
    }
}

/// Perturbation-to-signal ratio in dB for a unit-power latent.
pub fn psr_db(delta_power: f64) -> f64 {
    10.0 * delta_power.log10()
}

pub fn psr_db_to_power(psr_db: f64) -> f64 {
    10f64.powf(psr_db / 10.0)
}

/// Frozen models the ARN trains against.
pub struct FrozenPipeline<'a> {
    pub semcom: &'a SemcomModel,
    pub ddpm: &'a DdpmDecryptor,
    pub eve: &'a EveClassifier,
}

/// One batch's loss terms, kept separate for inspection.
#[derive(Debug, Clone, Copy)]
pub struct ArnLossParts {
    pub total: f64,
    pub com: f64,
    pub pri: f64,
    pub cov_hinge: f64,
    pub delta_power: f64,
}

struct LossTape {
    tape: Tape,
    vars: MlpVars,
    loss: crate::tape::Var,
    parts: ArnLossParts,
}

/// Record the full Scenario-II objective on a tape.
///
/// The channel noise is drawn fresh per call (reparameterized additive
/// constants); the decryptor's timestep and normalization use
/// `running_delta_power` rather than the batch statistic, because the argmin
/// over timesteps is not differentiable and the normalization constant is an
/// expectation in the decrypt rule.
#[allow(clippy::too_many_arguments)]
fn build_loss_tape(
    arn_spec: &MlpSpec,
    arn_params: &ParamSet,
    pipeline: &FrozenPipeline,
    images: &Tensor,
    labels: &[usize],
    lambdas: &Lambdas,
    epsilon: f64,
    sigma2_bob: f64,
    sigma2_eve: f64,
    running_delta_power: f64,
    rng: &mut SeedRng,
) -> Result<LossTape> {
    let latents = pipeline.semcom.encode(images)?;
    let (rows, cols) = latents.shape();

    let mut tape = Tape::new();
    let vars = crate::nn::params_on_tape(&mut tape, arn_spec, arn_params);
    let x = tape.constant(latents);
    let delta = mlp_forward_on_tape(&mut tape, arn_spec, &vars, x, None)?;
    let dpow = tape.mean_square(delta);
    let x_prime = tape.add(x, delta);

    // legitimate path: channel -> normalize -> single-step decrypt -> decode
    let noise_bob = crate::rng::gaussian(rng, rows, cols, 0.0, sigma2_bob.sqrt())?;
    let y_bob = tape.add_const(x_prime, &noise_bob);
    let norm = (1.0 + running_delta_power + sigma2_bob).sqrt();
    let y_bar = tape.scale(y_bob, 1.0 / norm);
    let info = EncryptionInfo::Arn {
        delta_power: running_delta_power,
    };
    let t_hat = pipeline.ddpm.matched_timestep(&info, sigma2_bob)?;
    let x_bob = pipeline.ddpm.single_step_on_tape(&mut tape, y_bar, t_hat)?;
    let s_hat = pipeline.semcom.decode_on_tape(&mut tape, x_bob)?;
    let com = tape.mse(s_hat, images);

    // eavesdropper path: channel -> frozen classifier -> true-class confidence
    let noise_eve = crate::rng::gaussian(rng, rows, cols, 0.0, sigma2_eve.sqrt())?;
    let y_eve = tape.add_const(x_prime, &noise_eve);
    let eve_vars = crate::nn::frozen_on_tape(&mut tape, &pipeline.eve.spec, &pipeline.eve.params);
    let logits = mlp_forward_on_tape(&mut tape, &pipeline.eve.spec, &eve_vars, y_eve, None)?;
    let conf = tape.softmax_pick(logits, labels);
    let pri = tape.mean_all(conf);

    // covertness hinge: max(0, E||delta||^2/L - epsilon)
    let shifted = tape.add_const(dpow, &Tensor::scalar(-epsilon));
    let hinge = tape.relu(shifted);

    let com_w = tape.scale(com, lambdas.com);
    let pri_w = tape.scale(pri, lambdas.pri);
    let cov_w = tape.scale(hinge, lambdas.cov);
    let partial = tape.add(com_w, pri_w);
    let loss = tape.add(partial, cov_w);

    let parts = ArnLossParts {
        total: tape.value(loss).item(),
        com: tape.value(com).item(),
        pri: tape.value(pri).item(),
        cov_hinge: tape.value(hinge).item(),
        delta_power: tape.value(dpow).item(),
    };
    Ok(LossTape {
        tape,
        vars,
        loss,
        parts,
    })
}

/// Scenario-II objective value on one batch (fresh noise draws from `rng`).
#[allow(clippy::too_many_arguments)]
pub fn arn_loss(
    arn: &ArnModel,
    pipeline: &FrozenPipeline,
    images: &Tensor,
    labels: &[usize],
    lambdas: &Lambdas,
    sigma2_bob: f64,
    sigma2_eve: f64,
    running_delta_power: f64,
    rng: &mut SeedRng,
) -> Result<ArnLossParts> {
    let lt = build_loss_tape(
        &arn.spec,
        &arn.params,
        pipeline,
        images,
        labels,
        lambdas,
        arn.epsilon,
        sigma2_bob,
        sigma2_eve,
        running_delta_power,
        rng,
    )?;
    Ok(lt.parts)
}

/// Adversarial training of the perturbation generator against the frozen
/// transceiver, decryptor and eavesdropper. Noise variances are re-drawn
/// uniformly per batch; the learning rate drops to 0.3x after 70% of epochs.
pub fn train_arn(
    data: &Dataset,
    pipeline: &FrozenPipeline,
    config: &ArnConfig,
    rng: &mut SeedRng,
) -> Result<ArnModel> {
    if data.is_empty() {
        return Err(Error::invalid("arn training dataset is empty"));
    }
    config.lambdas.validate()?;
    let mut arn = ArnModel::init(
        pipeline.semcom.latent_len(),
        config.hidden,
        config.epsilon,
        rng,
    )?;
    let mut adam = AdamState::new(&arn.params);
    let mut running_power = 0.01;
    let decay_at = (config.epochs as f64 * 0.7) as usize;

    for epoch in 0..config.epochs {
        let lr = if epoch >= decay_at {
            config.lr * 0.3
        } else {
            config.lr
        };
        let order = rng.permutation(data.len());
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let labels: Vec<usize> = batch.labels.iter().map(|&l| l as usize).collect();
            let sigma2_bob = rng.uniform(0.0, config.delta_sigma2_bob);
            let sigma2_eve = rng.uniform(0.0, config.delta_sigma2_eve);
            let lt = build_loss_tape(
                &arn.spec,
                &arn.params,
                pipeline,
                &batch.images,
                &labels,
                &config.lambdas,
                config.epsilon,
                sigma2_bob,
                sigma2_eve,
                running_power,
                rng,
            )?;
            if !lt.parts.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "arn training loss diverged: {}",
                    lt.parts.total
                )));
            }
            let grads = lt.tape.backward(lt.loss);
            let g = crate::nn::collect_grads(&lt.tape, &grads, &arn.spec, &lt.vars);
            adam_step(&mut arn.params, &g, &mut adam, lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
            running_power = 0.99 * running_power + 0.01 * lt.parts.delta_power;
        }
    }

    let latents = pipeline.semcom.encode(&data.images)?;
    arn.measured_delta_power = arn.delta_power(&latents)?;
    Ok(arn)
}

/// [`Encryptor`] strategy wrapper; the perturbation is deterministic, side
/// info carries the measured power.
pub struct ArnEncryptor {
    arn: std::sync::Arc<ArnModel>,
    /// Optional post-hoc amplitude scale on delta (PSR ablations).
    scale: f64,
}

impl ArnEncryptor {
    pub fn new(arn: std::sync::Arc<ArnModel>) -> Self {
        Self { arn, scale: 1.0 }
    }

    pub fn with_scale(arn: std::sync::Arc<ArnModel>, scale: f64) -> Self {
        Self { arn, scale }
    }

    pub fn effective_delta_power(&self) -> f64 {
        self.arn.measured_delta_power * self.scale * self.scale
    }
}

impl Encryptor for ArnEncryptor {
    fn name(&self) -> &'static str {
        "arn"
    }

    fn encrypt(&self, x: &Tensor, _rng: &mut SeedRng) -> Result<(Tensor, EncryptionInfo)> {
        let (_, delta) = self.arn.perturb(x)?;
        let x_prime = x.add(&delta.scale(self.scale));
        Ok((
            x_prime,
            EncryptionInfo::Arn {
                delta_power: self.effective_delta_power(),
            },
        ))
    }
}

// --- checkpoint ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArnMeta {
    pub epsilon: f64,
    pub measured_delta_power: f64,
    pub delta_sigma2_bob: f64,
    pub delta_sigma2_eve: f64,
    pub lambdas: Lambdas,
    pub seed: u64,
}

pub fn save_arn(dir: &Path, arn: &ArnModel, meta: &ArnMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::write_param_set(&dir.join("arn.pset"), &arn.spec, &arn.params, FloatDtype::F64)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_arn(dir: &Path) -> Result<(ArnModel, ArnMeta)> {
    let path = dir.join("meta.json");
    let text =
        std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
    let meta: ArnMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad meta.json: {e}")))?;
    let (spec, params) = crate::nn::read_param_set(&dir.join("arn.pset"))?;
    Ok((
        ArnModel {
            spec,
            params,
            epsilon: meta.epsilon,
            measured_delta_power: meta.measured_delta_power,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpm::{NennModel, NoiseSchedule};
    use crate::semcom::{SemcomConfig, SemcomModel};

    fn tiny_pipeline(rng: &mut SeedRng) -> (SemcomModel, DdpmDecryptor, EveClassifier) {
        let config = SemcomConfig {
            source_len: 16,
            latent_len: 6,
            hidden: 8,
            ..SemcomConfig::default()
        };
        let semcom = SemcomModel::init(&config, rng).unwrap();
        let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let nenn = NennModel::init(6, rng).unwrap();
        let eve = EveClassifier::init(6, 3, 8, rng).unwrap();
        (semcom, DdpmDecryptor::new(sched, nenn), eve)
    }

    #[test]
    fn zero_initialized_arn_is_identity() {
        let mut rng = SeedRng::from_seed(0);
        let arn = ArnModel::init(6, 8, 0.1, &mut rng).unwrap();
        let x = crate::rng::gaussian(&mut rng, 3, 6, 0.0, 1.0).unwrap();
        let (x_prime, delta) = arn.perturb(&x).unwrap();
        assert!(delta.data().iter().all(|&v| v == 0.0));
        assert_eq!(x_prime.data(), x.data());
    }

    #[test]
    fn perturb_is_deterministic() {
        let mut rng = SeedRng::from_seed(1);
        let mut arn = ArnModel::init(6, 8, 0.1, &mut rng).unwrap();
        // un-zero the head so delta is nontrivial
        arn.params = init_mlp(&arn.spec, &mut rng).unwrap();
        let x = crate::rng::gaussian(&mut rng, 4, 6, 0.0, 1.0).unwrap();
        let (_, d1) = arn.perturb(&x).unwrap();
        let (_, d2) = arn.perturb(&x).unwrap();
        assert_eq!(d1.data(), d2.data());
        assert!(d1.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn psr_round_trip() {
        for p in [0.01, 0.1, 3.162] {
            let db = psr_db(p);
            assert!((psr_db_to_power(db) - p).abs() < 1e-12);
        }
        assert!((psr_db(0.1) + 10.0).abs() < 1e-9);
    }

    #[test]
    fn hinge_contributes_zero_below_budget_and_linear_above() {
        let mut rng = SeedRng::from_seed(2);
        let (semcom, ddpm, eve) = tiny_pipeline(&mut rng);
        let pipeline = FrozenPipeline {
            semcom: &semcom,
            ddpm: &ddpm,
            eve: &eve,
        };
        let mut arn = ArnModel::init(6, 8, 0.1, &mut rng).unwrap();
        let images = crate::rng::gaussian(&mut rng, 5, 16, 0.5, 0.1).unwrap();
        let labels = vec![0usize, 1, 2, 0, 1];
        let lambdas = Lambdas::default();

        // zero delta: hinge exactly 0, loss = lam_com * baseline + lam_pri * conf
        let parts = arn_loss(
            &arn, &pipeline, &images, &labels, &lambdas, 0.1, 0.1, 0.05,
            &mut SeedRng::from_seed(5),
        )
        .unwrap();
        assert_eq!(parts.cov_hinge, 0.0);
        assert_eq!(parts.delta_power, 0.0);
        let expect = lambdas.com * parts.com + lambdas.pri * parts.pri;
        assert!((parts.total - expect).abs() < 1e-12);

        // inflate the head bias so the batch power exceeds the budget
        arn.params = init_mlp(&arn.spec, &mut rng).unwrap();
        let l = arn.spec.num_layers() - 1;
        arn.params
            .get_mut(&format!("b{l}"))
            .unwrap()
            .data_mut()
            .fill(1.0);
        let parts = arn_loss(
            &arn, &pipeline, &images, &labels, &lambdas, 0.1, 0.1, 0.05,
            &mut SeedRng::from_seed(5),
        )
        .unwrap();
        assert!(parts.delta_power > 0.1);
        assert!((parts.cov_hinge - (parts.delta_power - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn arn_gradient_matches_finite_difference() {
        let mut rng = SeedRng::from_seed(3);
        let (semcom, ddpm, eve) = tiny_pipeline(&mut rng);
        let pipeline = FrozenPipeline {
            semcom: &semcom,
            ddpm: &ddpm,
            eve: &eve,
        };
        let mut arn = ArnModel::init(6, 8, 0.02, &mut rng).unwrap();
        arn.params = init_mlp(&arn.spec, &mut rng).unwrap();
        let images = crate::rng::gaussian(&mut rng, 4, 16, 0.5, 0.1).unwrap();
        let labels = vec![0usize, 1, 2, 0];
        let lambdas = Lambdas::default();

        // identical noise draws on every evaluation
        let loss_at = |params: &ParamSet| {
            let lt = build_loss_tape(
                &arn.spec, params, &pipeline, &images, &labels, &lambdas, 0.02, 0.2, 0.3, 0.05,
                &mut SeedRng::from_seed(77),
            )
            .unwrap();
            lt.parts.total
        };
        let lt = build_loss_tape(
            &arn.spec,
            &arn.params,
            &pipeline,
            &images,
            &labels,
            &lambdas,
            0.02,
            0.2,
            0.3,
            0.05,
            &mut SeedRng::from_seed(77),
        )
        .unwrap();
        let grads = lt.tape.backward(lt.loss);
        let analytic = crate::nn::collect_grads(&lt.tape, &grads, &arn.spec, &lt.vars);

        let step = 1e-6;
        let names: Vec<String> = arn.params.iter().map(|(n, _)| n.to_string()).collect();
        let mut checked = 0;
        for name in names {
            let len = arn.params.get(&name).unwrap().len();
            for k in (0..len).step_by(3) {
                let mut plus = arn.params.clone();
                plus.get_mut(&name).unwrap().data_mut()[k] += step;
                let mut minus = arn.params.clone();
                minus.get_mut(&name).unwrap().data_mut()[k] -= step;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let a = analytic.get(&name).unwrap().data()[k];
                assert!(
                    (numeric - a).abs() <= 1e-4 * numeric.abs().max(a.abs()).max(1e-6),
                    "{name}[{k}]: numeric {numeric} analytic {a}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 30);
    }
}
