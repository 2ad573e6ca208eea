//! Baseline semantic transceiver: semantic encoder, joint source-channel
//! encoder/decoder and semantic decoder, trained end-to-end with MSE through
//! an AWGN channel.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::snr_db_to_sigma2;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, init_mlp, mlp_forward, mlp_forward_on_tape, params_on_tape, Activation, AdamState,
    FloatDtype, MlpSpec, MlpVars, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-12;

/// How the latent block is scaled to unit average power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerNorm {
    /// One scale per batch (default: keeps individual latents informative).
    #[default]
    PerBatch,
    /// One scale per sample.
    PerSample,
}

/// The four trained networks plus the channel-facing geometry.
#[derive(Debug, Clone)]
pub struct SemcomModel {
    pub se_spec: MlpSpec,
    pub se: ParamSet,
    pub jsce_spec: MlpSpec,
    pub jsce: ParamSet,
    pub jscd_spec: MlpSpec,
    pub jscd: ParamSet,
    pub sd_spec: MlpSpec,
    pub sd: ParamSet,
    pub train_snr_db: f64,
    pub norm: PowerNorm,
}

/// Hyperparameters for [`train_semcom`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SemcomConfig {
    pub source_len: usize,
    pub latent_len: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_snr_db: f64,
    pub norm: PowerNorm,
    /// Stop when validation MSE has not improved for this many epochs.
    pub patience: usize,
}

impl Default for SemcomConfig {
    fn default() -> Self {
        Self {
            source_len: 784,
            latent_len: 23,
            hidden: 32,
            lr: 1e-3,
            batch_size: 256,
            epochs: 50,
            train_snr_db: 5.0,
            norm: PowerNorm::PerBatch,
            patience: 10,
        }
    }
}

impl SemcomModel {
    pub fn init(config: &SemcomConfig, rng: &mut SeedRng) -> Result<Self> {
        let (ls, lt, h) = (config.source_len, config.latent_len, config.hidden);
        let se_spec = MlpSpec::new(vec![ls, h], vec![Activation::Relu])?;
        let jsce_spec = MlpSpec::new(vec![h, lt], vec![Activation::Relu])?;
        let jscd_spec = MlpSpec::new(vec![lt, h], vec![Activation::Relu])?;
        let sd_spec = MlpSpec::new(vec![h, ls], vec![Activation::Sigmoid])?;
        Ok(Self {
            se: init_mlp(&se_spec, rng)?,
            jsce: init_mlp(&jsce_spec, rng)?,
            jscd: init_mlp(&jscd_spec, rng)?,
            sd: init_mlp(&sd_spec, rng)?,
            se_spec,
            jsce_spec,
            jscd_spec,
            sd_spec,
            train_snr_db: config.train_snr_db,
            norm: config.norm,
        })
    }

    pub fn source_len(&self) -> usize {
        self.se_spec.input_width()
    }

    pub fn latent_len(&self) -> usize {
        self.jsce_spec.output_width()
    }

    /// Source batch -> unit-power latent batch.
    pub fn encode(&self, s: &Tensor) -> Result<Tensor> {
        if s.cols() != self.source_len() {
            return Err(Error::Dimension {
                what: "source width",
                expected: self.source_len(),
                got: s.cols(),
            });
        }
        let h = mlp_forward(&self.se_spec, &self.se, s, None)?;
        let x = mlp_forward(&self.jsce_spec, &self.jsce, &h, None)?;
        Ok(normalize_power(&x, self.norm))
    }

    /// Received latent batch -> reconstructed source batch (sigmoid range).
    pub fn decode(&self, y: &Tensor) -> Result<Tensor> {
        if y.cols() != self.latent_len() {
            return Err(Error::Dimension {
                what: "latent width",
                expected: self.latent_len(),
                got: y.cols(),
            });
        }
        let h = mlp_forward(&self.jscd_spec, &self.jscd, y, None)?;
        mlp_forward(&self.sd_spec, &self.sd, &h, None)
    }

    /// Decoder half recorded on a tape (used by losses that differentiate
    /// through a frozen receiver).
    pub fn decode_on_tape(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let jscd = crate::nn::frozen_on_tape(tape, &self.jscd_spec, &self.jscd);
        let sd = crate::nn::frozen_on_tape(tape, &self.sd_spec, &self.sd);
        let h = mlp_forward_on_tape(tape, &self.jscd_spec, &jscd, y, None)?;
        mlp_forward_on_tape(tape, &self.sd_spec, &sd, h, None)
    }
}

pub fn normalize_power(x: &Tensor, norm: PowerNorm) -> Tensor {
    match norm {
        PowerNorm::PerBatch => x.scale(1.0 / (x.mean_square() + NORM_EPS).sqrt()),
        PowerNorm::PerSample => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                let row = out.row_slice_mut(r);
                let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
                let s = 1.0 / (ms + NORM_EPS).sqrt();
                for v in row {
                    *v *= s;
                }
            }
            out
        }
    }
}

/// Mean over batch and pixels of the squared reconstruction error.
pub fn comm_mse(s: &Tensor, s_hat: &Tensor) -> Result<f64> {
    if s.shape() != s_hat.shape() {
        return Err(Error::Dimension {
            what: "comm_mse operands",
            expected: s.len(),
            got: s_hat.len(),
        });
    }
    Ok(s
        .data()
        .iter()
        .zip(s_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s.len() as f64)
}

struct TapeNets {
    se: MlpVars,
    jsce: MlpVars,
    jscd: MlpVars,
    sd: MlpVars,
}

fn transceiver_loss(
    tape: &mut Tape,
    model: &SemcomModel,
    nets: &TapeNets,
    batch: &Tensor,
    noise: &Tensor,
) -> Result<Var> {
    let s = tape.constant(batch.clone());
    let h = mlp_forward_on_tape(tape, &model.se_spec, &nets.se, s, None)?;
    let x = mlp_forward_on_tape(tape, &model.jsce_spec, &nets.jsce, h, None)?;
    let x = match model.norm {
        PowerNorm::PerBatch => tape.normalize_power(x, NORM_EPS),
        // Training always uses the batch statistic; per-sample scaling is an
        // inference-time option.
        PowerNorm::PerSample => tape.normalize_power(x, NORM_EPS),
    };
    let y = tape.add_const(x, noise);
    let h2 = mlp_forward_on_tape(tape, &model.jscd_spec, &nets.jscd, y, None)?;
    let s_hat = mlp_forward_on_tape(tape, &model.sd_spec, &nets.sd, h2, None)?;
    Ok(tape.mse(s_hat, batch))
}

/// End-to-end MSE training over an AWGN channel at the configured SNR.
///
/// Returns the trained model and per-epoch validation MSE (training MSE when
/// no validation set is supplied).
pub fn train_semcom(
    train: &Dataset,
    val: Option<&Dataset>,
    config: &SemcomConfig,
    rng: &mut SeedRng,
) -> Result<(SemcomModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut model = SemcomModel::init(config, rng)?;
    let sigma2 = snr_db_to_sigma2(config.train_snr_db);
    let std = sigma2.sqrt();

    let mut adam_se = AdamState::new(&model.se);
    let mut adam_jsce = AdamState::new(&model.jsce);
    let mut adam_jscd = AdamState::new(&model.jscd);
    let mut adam_sd = AdamState::new(&model.sd);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for _epoch in 0..config.epochs {
        let order = rng.permutation(train.len());
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk).images;
            let noise = crate::rng::gaussian(rng, batch.rows(), model.latent_len(), 0.0, std)?;

            let mut tape = Tape::new();
            let nets = TapeNets {
                se: params_on_tape(&mut tape, &model.se_spec, &model.se),
                jsce: params_on_tape(&mut tape, &model.jsce_spec, &model.jsce),
                jscd: params_on_tape(&mut tape, &model.jscd_spec, &model.jscd),
                sd: params_on_tape(&mut tape, &model.sd_spec, &model.sd),
            };
            let loss = transceiver_loss(&mut tape, &model, &nets, &batch, &noise)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "semcom training loss diverged: {loss_value}"
                )));
            }
            let grads = tape.backward(loss);
            for (spec, params, vars, adam) in [
                (&model.se_spec, &mut model.se, &nets.se, &mut adam_se),
                (&model.jsce_spec, &mut model.jsce, &nets.jsce, &mut adam_jsce),
                (&model.jscd_spec, &mut model.jscd, &nets.jscd, &mut adam_jscd),
                (&model.sd_spec, &mut model.sd, &nets.sd, &mut adam_sd),
            ] {
                let g = crate::nn::collect_grads(&tape, &grads, spec, vars);
                adam_step(params, &g, adam, config.lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
            }
        }

        let monitor = val.unwrap_or(train);
        let mse = eval_comm_mse(&model, monitor, sigma2, &mut rng.split(history.len() as u64))?;
        history.push(mse);
        if mse + 1e-5 < best {
            best = mse;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    Ok((model, history))
}

/// Held-out reconstruction MSE through an AWGN channel at `sigma2`.
pub fn eval_comm_mse(
    model: &SemcomModel,
    data: &Dataset,
    sigma2: f64,
    rng: &mut SeedRng,
) -> Result<f64> {
    let x = model.encode(&data.images)?;
    let y = crate::channel::awgn(&x, sigma2, rng)?;
    let s_hat = model.decode(&y)?;
    comm_mse(&data.images, &s_hat)
}

// --- checkpoint -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemcomMeta {
    pub dataset: String,
    pub source_len: usize,
    pub latent_len: usize,
    pub train_snr_db: f64,
    pub seed: u64,
    pub norm: PowerNorm,
}

pub fn save_semcom(dir: &Path, model: &SemcomModel, meta: &SemcomMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, spec, params) in [
        ("se", &model.se_spec, &model.se),
        ("jsce", &model.jsce_spec, &model.jsce),
        ("jscd", &model.jscd_spec, &model.jscd),
        ("sd", &model.sd_spec, &model.sd),
    ] {
        crate::nn::write_param_set(&dir.join(format!("{name}.pset")), spec, params, FloatDtype::F64)?;
    }
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_semcom(dir: &Path) -> Result<(SemcomModel, SemcomMeta)> {
    let meta: SemcomMeta = read_meta(dir)?;
    let (se_spec, se) = crate::nn::read_param_set(&dir.join("se.pset"))?;
    let (jsce_spec, jsce) = crate::nn::read_param_set(&dir.join("jsce.pset"))?;
    let (jscd_spec, jscd) = crate::nn::read_param_set(&dir.join("jscd.pset"))?;
    let (sd_spec, sd) = crate::nn::read_param_set(&dir.join("sd.pset"))?;
    Ok((
        SemcomModel {
            se_spec,
            se,
            jsce_spec,
            jsce,
            jscd_spec,
            jscd,
            sd_spec,
            sd,
            train_snr_db: meta.train_snr_db,
            norm: meta.norm,
        },
        meta,
    ))
}

fn read_meta<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join("meta.json");
    let text =
        std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("bad meta.json: {e}")))
}
