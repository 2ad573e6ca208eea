//! The eavesdropper: a classifier inferring the private label from the raw
//! received block, with its softmax-confidence and accuracy metrics.
//!
//! Eve trains on unencrypted transmissions observed across the evaluation
//! SNR range, which makes her robust to channel noise; the Scenario-II
//! encryptor is graded against this fixed adversary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, init_mlp, mlp_forward, Activation, AdamState, FloatDtype, MlpSpec, ParamSet,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::rng::SeedRng;
use crate::semcom::SemcomModel;
use crate::tape::softmax_row;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EveClassifier {
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EveConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Training draws the link SNR uniformly from this dB range per sample.
    pub snr_db_range: (f64, f64),
}

impl Default for EveConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-3,
            batch_size: 256,
            epochs: 60,
            snr_db_range: (-5.0, 20.0),
        }
    }
}

impl EveClassifier {
    pub fn init(latent_len: usize, num_classes: usize, hidden: usize, rng: &mut SeedRng) -> Result<Self> {
        let spec = MlpSpec::new(
            vec![latent_len, hidden, hidden, num_classes],
            vec![Activation::Relu, Activation::Relu, Activation::None],
        )?;
        Ok(Self {
            params: init_mlp(&spec, rng)?,
            spec,
            num_classes,
        })
    }

    /// Unnormalized logits for a batch of received blocks.
    pub fn logits(&self, y_eve: &Tensor) -> Result<Tensor> {
        mlp_forward(&self.spec, &self.params, y_eve, None)
    }
}

/// Softmax probability the classifier assigns to the true label.
pub fn eve_confidence(classifier: &EveClassifier, y_eve: &Tensor, label: usize) -> Result<f64> {
    if label >= classifier.num_classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            classifier.num_classes
        )));
    }
    let logits = classifier.logits(y_eve)?;
    let mut acc = 0.0;
    for r in 0..logits.rows() {
        acc += softmax_row(logits.row_slice(r))[label];
    }
    Ok(acc / logits.rows() as f64)
}

/// Fraction of argmax-correct predictions.
pub fn eve_accuracy(classifier: &EveClassifier, y_eve: &Tensor, labels: &[u8]) -> Result<f64> {
    if y_eve.rows() != labels.len() {
        return Err(Error::Dimension {
            what: "accuracy batch",
            expected: y_eve.rows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty batch"));
    }
    let logits = classifier.logits(y_eve)?;
    let mut correct = 0usize;
    for r in 0..logits.rows() {
        let row = logits.row_slice(r);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if argmax == labels[r] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Train Eve on latents observed through the unprotected pipeline with the
/// per-sample SNR drawn uniformly in dB. Cross-entropy, Adam.
pub fn train_eve(
    semcom: &SemcomModel,
    data: &Dataset,
    config: &EveConfig,
    rng: &mut SeedRng,
) -> Result<EveClassifier> {
    if data.is_empty() {
        return Err(Error::invalid("eve training dataset is empty"));
    }
    let mut eve = EveClassifier::init(semcom.latent_len(), data.num_classes, config.hidden, rng)?;
    let mut adam = AdamState::new(&eve.params);
    let latents = semcom.encode(&data.images)?;

    for _epoch in 0..config.epochs {
        let order = rng.permutation(data.len());
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut y = Tensor::zeros(b, latents.cols());
            let mut labels = Vec::with_capacity(b);
            for (r, &i) in chunk.iter().enumerate() {
                let snr = rng.uniform(config.snr_db_range.0, config.snr_db_range.1);
                let std = crate::channel::snr_db_to_sigma2(snr).sqrt();
                for c in 0..latents.cols() {
                    y.set(r, c, latents.get(i, c) + std * rng.standard_normal());
                }
                labels.push(data.labels[i] as usize);
            }
            let (loss, grads) = cross_entropy_grad(&eve, &y, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("eve training loss diverged: {loss}")));
            }
            adam_step(&mut eve.params, &grads, &mut adam, config.lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
        }
    }
    Ok(eve)
}

/// Mean cross-entropy and its parameter gradient, via softmax-minus-onehot on
/// the logits followed by the tape for the layers below.
fn cross_entropy_grad(
    eve: &EveClassifier,
    y: &Tensor,
    labels: &[usize],
) -> Result<(f64, ParamSet)> {
    use crate::tape::Tape;

    let mut tape = Tape::new();
    let vars = crate::nn::params_on_tape(&mut tape, &eve.spec, &eve.params);
    let input = tape.constant(y.clone());
    let logits = crate::nn::mlp_forward_on_tape(&mut tape, &eve.spec, &vars, input, None)?;

    // loss = mean_r [-log softmax(logits_r)[label_r]]
    // d loss / d logits = (softmax - onehot) / batch; inject through a
    // hadamard-with-constant trick: record sum(logits * g_const) whose
    // gradient w.r.t. logits is exactly g_const.
    let lv = tape.value(logits).clone();
    let b = lv.rows();
    let mut loss_value = 0.0;
    let mut g = Tensor::zeros(lv.rows(), lv.cols());
    for r in 0..b {
        let p = softmax_row(lv.row_slice(r));
        loss_value -= p[labels[r]].max(1e-300).ln();
        for (j, &pj) in p.iter().enumerate() {
            let onehot = if j == labels[r] { 1.0 } else { 0.0 };
            g.set(r, j, (pj - onehot) / b as f64);
        }
    }
    loss_value /= b as f64;

    let gc = tape.constant(g);
    let prod = tape.hadamard(logits, gc);
    let sum = tape.mean_all(prod);
    let surrogate = tape.scale(sum, (lv.rows() * lv.cols()) as f64);
    let grads = tape.backward(surrogate);
    Ok((
        loss_value,
        crate::nn::collect_grads(&tape, &grads, &eve.spec, &vars),
    ))
}

// --- checkpoint ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EveMeta {
    pub num_classes: usize,
    pub latent_len: usize,
    pub snr_db_range: (f64, f64),
    pub seed: u64,
    /// Class index -> human-readable label.
    pub label_map: Vec<String>,
}

pub fn save_eve(dir: &Path, eve: &EveClassifier, meta: &EveMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::write_param_set(&dir.join("eve.pset"), &eve.spec, &eve.params, FloatDtype::F64)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_eve(dir: &Path) -> Result<(EveClassifier, EveMeta)> {
    let path = dir.join("meta.json");
    let text =
        std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
    let meta: EveMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad meta.json: {e}")))?;
    let (spec, params) = crate::nn::read_param_set(&dir.join("eve.pset"))?;
    Ok((
        EveClassifier {
            spec,
            params,
            num_classes: meta.num_classes,
        },
        meta,
    ))
}
