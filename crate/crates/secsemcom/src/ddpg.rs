//! DDPG power allocation: online/target actor and critic, replay buffer,
//! soft target updates and Gaussian exploration, plus the exhaustive-search
//! baseline it is graded against.
//!
//! The environment is contextual: a state is a pair of link noise variances,
//! the action is the power split `u`, and the reward is the negative
//! weighted objective (communication MSE through the decryptor, the
//! mutual-information bound on the eavesdropper link, covertness MSE).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agn::{covertness_mse, encrypt_agn, PowerAllocation};
use crate::channel::{awgn, snr_db_to_sigma2};
use crate::config::Lambdas;
use crate::ddpm::DdpmDecryptor;
use crate::encryptor::EncryptionInfo;
use crate::error::{Error, Result};
use crate::mi::mi_upper_bound;
use crate::nn::{
    adam_step, init_mlp, mlp_forward, mlp_forward_on_tape, Activation, AdamState, FloatDtype,
    MlpSpec, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::rng::SeedRng;
use crate::semcom::SemcomModel;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Link noise variances `[sigma2_bob, sigma2_eve]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub sigma2_bob: f64,
    pub sigma2_eve: f64,
}

impl ChannelState {
    pub fn new(sigma2_bob: f64, sigma2_eve: f64) -> Result<Self> {
        if sigma2_bob < 0.0 || sigma2_eve < 0.0 {
            return Err(Error::invalid("noise variances must be >= 0"));
        }
        Ok(Self {
            sigma2_bob,
            sigma2_eve,
        })
    }

    /// Network input features. Noise variances span two and a half decades
    /// over the SNR sweep, so the nets see them in the log domain.
    fn features(&self) -> [f64; 2] {
        [log_feature(self.sigma2_bob), log_feature(self.sigma2_eve)]
    }

    fn as_row(&self) -> Tensor {
        Tensor::row(&self.features())
    }
}

/// One experience tuple.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub state: ChannelState,
    pub action: f64,
    pub reward: f64,
    pub next_state: ChannelState,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            write: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<'a>(&'a self, n: usize, rng: &mut SeedRng) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.below(self.items.len())]).collect()
    }
}

/// Actor/critic pairs with their targets.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor_spec: MlpSpec,
    pub actor: ParamSet,
    pub actor_target: ParamSet,
    pub critic_spec: MlpSpec,
    pub critic: ParamSet,
    pub critic_target: ParamSet,
    pub gamma: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub xi: f64,
    /// Exploration noise variance, decayed multiplicatively.
    pub explore_variance: f64,
    pub explore_decay: f64,
    pub explore_floor: f64,
    pub buffer_capacity: usize,
    pub minibatch: usize,
    pub steps: usize,
    /// Environment steps collected before updates begin.
    pub warmup_steps: usize,
    /// Training states draw link SNRs uniformly from this dB range.
    pub snr_db_range: (f64, f64),
    /// Images per reward evaluation.
    pub reward_batch: usize,
    /// Joint pairs per mutual-information estimate inside the reward.
    pub mi_pairs: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.9,
            xi: 1e-3,
            explore_variance: 0.5,
            explore_decay: 0.995,
            explore_floor: 0.05,
            buffer_capacity: 100_000,
            minibatch: 64,
            steps: 6000,
            warmup_steps: 300,
            snr_db_range: (-5.0, 20.0),
            reward_batch: 256,
            mi_pairs: 1024,
        }
    }
}

impl DdpgAgent {
    pub fn init(config: &DdpgConfig, rng: &mut SeedRng) -> Result<Self> {
        let h = config.hidden;
        let actor_spec = MlpSpec::new(vec![2, h, 1], vec![Activation::Relu, Activation::Tanh])?;
        let critic_spec = MlpSpec::new(
            vec![3, h, h, 1],
            vec![Activation::Relu, Activation::Relu, Activation::None],
        )?;
        let mut actor = init_mlp(&actor_spec, rng)?;
        let mut critic = init_mlp(&critic_spec, rng)?;
        // small output heads keep the tanh unsaturated and the early Q-values
        // near zero
        shrink_final_layer(&actor_spec, &mut actor, 3e-3, rng);
        shrink_final_layer(&critic_spec, &mut critic, 3e-3, rng);
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_spec,
            actor,
            critic_spec,
            critic,
            gamma: config.gamma,
            xi: config.xi,
        })
    }

    /// Deterministic policy output `u = (tanh(z) + 1) / 2`, optionally with
    /// clipped Gaussian exploration of the given variance.
    pub fn act(
        &self,
        state: &ChannelState,
        explore_variance: Option<f64>,
        rng: &mut SeedRng,
    ) -> Result<f64> {
        let out = mlp_forward(&self.actor_spec, &self.actor, &state.as_row(), None)?;
        let mut u = (out.item() + 1.0) / 2.0;
        if let Some(var) = explore_variance {
            u += var.sqrt() * rng.standard_normal();
        }
        Ok(u.clamp(0.0, 1.0))
    }

    fn critic_value(
        &self,
        spec: &MlpSpec,
        params: &ParamSet,
        state: &ChannelState,
        u: f64,
    ) -> Result<f64> {
        let input = Tensor::row(&[state.sigma2_bob, state.sigma2_eve, u]);
        Ok(mlp_forward(spec, params, &input, None)?.item())
    }

    pub fn q_value(&self, state: &ChannelState, u: f64) -> Result<f64> {
        self.critic_value(&self.critic_spec, &self.critic, state, u)
    }

    /// Blend both target networks toward the online ones:
    /// `theta_target <- xi * theta + (1 - xi) * theta_target`.
    pub fn soft_update(&mut self, xi: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::invalid(format!("xi must lie in [0, 1], got {xi}")));
        }
        for (online, target) in [
            (&self.actor, &mut self.actor_target),
            (&self.critic, &mut self.critic_target),
        ] {
            for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
                for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
                    *tv = xi * ov + (1.0 - xi) * *tv;
                }
            }
        }
        Ok(())
    }

    /// One Adam step on the mean squared TD error against the frozen targets.
    /// Returns the pre-step TD loss.
    pub fn critic_update(&mut self, batch: &[&Transition], lr: f64, adam: &mut AdamState) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("critic update needs a non-empty minibatch"));
        }
        let b = batch.len();
        let mut targets = Tensor::zeros(b, 1);
        let mut inputs = Tensor::zeros(b, 3);
        for (r, tr) in batch.iter().enumerate() {
            let next_out = mlp_forward(
                &self.actor_spec,
                &self.actor_target,
                &tr.next_state.as_row(),
                None,
            )?;
            let next_u = (next_out.item() + 1.0) / 2.0;
            let q_next = self.critic_value(&self.critic_spec, &self.critic_target, &tr.next_state, next_u)?;
            targets.set(r, 0, tr.reward + self.gamma * q_next);
            let f = tr.state.features();
            inputs.set(r, 0, f[0]);
            inputs.set(r, 1, f[1]);
            inputs.set(r, 2, tr.action);
        }

        let mut tape = Tape::new();
        let vars = crate::nn::params_on_tape(&mut tape, &self.critic_spec, &self.critic);
        let input = tape.constant(inputs);
        let q = mlp_forward_on_tape(&mut tape, &self.critic_spec, &vars, input, None)?;
        let loss = tape.mse(q, &targets);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("critic TD loss diverged: {value}")));
        }
        let grads = tape.backward(loss);
        let g = crate::nn::collect_grads(&tape, &grads, &self.critic_spec, &vars);
        adam_step(&mut self.critic, &g, adam, lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
        Ok(value)
    }

    /// One ascent step on `E Q(state, pi(state))` through the frozen critic.
    pub fn actor_update(&mut self, batch: &[&Transition], lr: f64, adam: &mut AdamState) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("actor update needs a non-empty minibatch"));
        }
        let b = batch.len();
        let mut states = Tensor::zeros(b, 2);
        for (r, tr) in batch.iter().enumerate() {
            states.set(r, 0, tr.state.sigma2_bob);
            states.set(r, 1, tr.state.sigma2_eve);
        }

        let mut tape = Tape::new();
        let vars = crate::nn::params_on_tape(&mut tape, &self.actor_spec, &self.actor);
        let sv = tape.constant(states);
        let z = mlp_forward_on_tape(&mut tape, &self.actor_spec, &vars, sv, None)?;
        // u = (z + 1) / 2
        let half = tape.scale(z, 0.5);
        let u = tape.add_const(half, &Tensor::filled(b, 1, 0.5));
        let critic_vars = crate::nn::frozen_on_tape(&mut tape, &self.critic_spec, &self.critic);
        let joint = tape.concat_cols(sv, u);
        let q = mlp_forward_on_tape(&mut tape, &self.critic_spec, &critic_vars, joint, None)?;
        let mean_q = tape.mean_all(q);
        let loss = tape.scale(mean_q, -1.0);
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Numeric("actor objective diverged".into()));
        }
        let grads = tape.backward(loss);
        let g = crate::nn::collect_grads(&tape, &grads, &self.actor_spec, &vars);
        adam_step(&mut self.actor, &g, adam, lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
        Ok(())
    }
}

fn shrink_final_layer(spec: &MlpSpec, params: &mut ParamSet, bound: f64, rng: &mut SeedRng) {
    let l = spec.num_layers() - 1;
    for name in [format!("w{l}"), format!("b{l}")] {
        if let Some(t) = params.get_mut(&name) {
            for v in t.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
    }
}

/// Everything the reward evaluation needs besides the state and action.
pub struct RewardContext<'a> {
    pub semcom: &'a SemcomModel,
    pub ddpm: &'a DdpmDecryptor,
    pub lambdas: Lambdas,
    /// Evaluation images (reward draws `reward_batch` rows from here).
    pub images: &'a Tensor,
    pub mi_pairs: usize,
}

/// Objective terms at one `(state, u)` point.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub comm_mse: f64,
    pub mi_nats: f64,
    pub covertness: f64,
}

impl ObjectiveParts {
    pub fn weighted(&self, lambdas: &Lambdas) -> f64 {
        lambdas.com * self.comm_mse + lambdas.pri * self.mi_nats + lambdas.cov * self.covertness
    }
}

/// Evaluate the Scenario-I objective at `(state, u)`: encrypt with AGN, pass
/// both links through their channels, decrypt for Bob, estimate the
/// mutual-information bound for Eve (clipped at zero), measure covertness.
pub fn evaluate_objective(
    state: &ChannelState,
    u: f64,
    ctx: &RewardContext,
    rng: &mut SeedRng,
) -> Result<ObjectiveParts> {
    let u = PowerAllocation::new(u.clamp(0.0, 1.0))?;
    let x = ctx.semcom.encode(ctx.images)?;
    let x_prime = encrypt_agn(&x, u, rng)?;
    let y_bob = awgn(&x_prime, state.sigma2_bob, rng)?;
    let y_eve = awgn(&x_prime, state.sigma2_eve, rng)?;

    let info = EncryptionInfo::Agn { u: u.value() };
    let x_bob = ctx.ddpm.decrypt(&y_bob, &info, state.sigma2_bob)?;
    let s_hat = ctx.semcom.decode(&x_bob)?;
    let comm = crate::semcom::comm_mse(ctx.images, &s_hat)?;

    // The mutual-information term may use more joint pairs than the image
    // batch has rows; tile the latents and draw fresh encryption and channel
    // noise per pair.
    let mi = if ctx.mi_pairs <= x.rows() {
        mi_upper_bound(
            &head_rows(&x, ctx.mi_pairs),
            &head_rows(&y_eve, ctx.mi_pairs),
            u.value(),
            state.sigma2_eve,
        )?
        .nats
        .max(0.0)
    } else {
        let x_mi = tile_rows(&x, ctx.mi_pairs);
        let xp_mi = encrypt_agn(&x_mi, u, rng)?;
        let y_mi = awgn(&xp_mi, state.sigma2_eve, rng)?;
        mi_upper_bound(&x_mi, &y_mi, u.value(), state.sigma2_eve)?
            .nats
            .max(0.0)
    };

    let cov = covertness_mse(&x, &x_prime)?;
    Ok(ObjectiveParts {
        comm_mse: comm,
        mi_nats: mi,
        covertness: cov,
    })
}

fn head_rows(t: &Tensor, n: usize) -> Tensor {
    Tensor::from_vec(n, t.cols(), t.data()[..n * t.cols()].to_vec())
}

fn tile_rows(t: &Tensor, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * t.cols());
    for r in 0..n {
        data.extend_from_slice(t.row_slice(r % t.rows()));
    }
    Tensor::from_vec(n, t.cols(), data)
}

/// Reward = negative weighted objective.
pub fn reward(state: &ChannelState, u: f64, ctx: &RewardContext, rng: &mut SeedRng) -> Result<f64> {
    Ok(-evaluate_objective(state, u, ctx, rng)?.weighted(&ctx.lambdas))
}

/// Grid argmin of `objective` over `u in {0, step, ..., 1}`; ties break
/// toward smaller `u`.
pub fn exhaustive_search(
    objective: &mut dyn FnMut(f64) -> Result<f64>,
    step: f64,
) -> Result<(f64, f64)> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..=n {
        let u = (k as f64 * step).min(1.0);
        let j = objective(u)?;
        if j < best.1 {
            best = (u, j);
        }
    }
    Ok(best)
}

/// Per-step training log record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainStep {
    pub step: usize,
    pub sigma2_bob: f64,
    pub sigma2_eve: f64,
    pub u: f64,
    pub reward: f64,
    pub td_loss: f64,
}

/// Train the allocator on i.i.d. single-step episodes: sample a state from
/// the configured SNR ranges, act with exploration, score with the full
/// objective, store, and (after warmup) update actor, critic and targets.
pub fn train_ddpg(
    ctx: &RewardContext,
    config: &DdpgConfig,
    rng: &mut SeedRng,
) -> Result<(DdpgAgent, Vec<TrainStep>)> {
    let mut agent = DdpgAgent::init(config, rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut adam_actor = AdamState::new(&agent.actor);
    let mut adam_critic = AdamState::new(&agent.critic);
    let mut explore = config.explore_variance;
    let mut log = Vec::with_capacity(config.steps);

    let draw_state = |rng: &mut SeedRng| -> ChannelState {
        let (lo, hi) = config.snr_db_range;
        ChannelState {
            sigma2_bob: snr_db_to_sigma2(rng.uniform(lo, hi)),
            sigma2_eve: snr_db_to_sigma2(rng.uniform(lo, hi)),
        }
    };

    let reward_rows = |rng: &mut SeedRng| -> Tensor {
        let n = config.reward_batch.min(ctx.images.rows());
        let start = rng.below(ctx.images.rows() - n + 1);
        let cols = ctx.images.cols();
        Tensor::from_vec(
            n,
            cols,
            ctx.images.data()[start * cols..(start + n) * cols].to_vec(),
        )
    };

    let mut state = draw_state(rng);
    for step in 0..config.steps {
        let u = agent.act(&state, Some(explore), rng)?;
        let images = reward_rows(rng);
        let step_ctx = RewardContext {
            images: &images,
            ..*ctx
        };
        let r = reward(&state, u, &step_ctx, rng)?;
        let next_state = draw_state(rng);
        buffer.push(Transition {
            state,
            action: u,
            reward: r,
            next_state,
        });
        let acted = state;
        state = next_state;

        let mut td_loss = f64::NAN;
        if step >= config.warmup_steps && buffer.len() >= config.minibatch {
            let batch = buffer.sample(config.minibatch, rng);
            td_loss = agent.critic_update(&batch, config.critic_lr, &mut adam_critic)?;
            agent.actor_update(&batch, config.actor_lr, &mut adam_actor)?;
            agent.soft_update(agent.xi)?;
        }
        if (step + 1) % 100 == 0 {
            explore = (explore * config.explore_decay).max(config.explore_floor);
        }
        log.push(TrainStep {
            step,
            sigma2_bob: acted.sigma2_bob,
            sigma2_eve: acted.sigma2_eve,
            u,
            reward: r,
            td_loss,
        });
    }
    Ok((agent, log))
}

// --- checkpoint ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdpgMeta {
    pub gamma: f64,
    pub xi: f64,
    pub snr_db_range: (f64, f64),
    pub lambdas: Lambdas,
    pub seed: u64,
}

pub fn save_ddpg(dir: &Path, agent: &DdpgAgent, meta: &DdpgMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, spec, params) in [
        ("actor", &agent.actor_spec, &agent.actor),
        ("actor_target", &agent.actor_spec, &agent.actor_target),
        ("critic", &agent.critic_spec, &agent.critic),
        ("critic_target", &agent.critic_spec, &agent.critic_target),
    ] {
        crate::nn::write_param_set(&dir.join(format!("{name}.pset")), spec, params, FloatDtype::F64)?;
    }
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_ddpg(dir: &Path) -> Result<(DdpgAgent, DdpgMeta)> {
    let path = dir.join("meta.json");
    let text =
        std::fs::read_to_string(&path).map_err(|_| Error::Missing(path.display().to_string()))?;
    let meta: DdpgMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad meta.json: {e}")))?;
    let (actor_spec, actor) = crate::nn::read_param_set(&dir.join("actor.pset"))?;
    let (_, actor_target) = crate::nn::read_param_set(&dir.join("actor_target.pset"))?;
    let (critic_spec, critic) = crate::nn::read_param_set(&dir.join("critic.pset"))?;
    let (_, critic_target) = crate::nn::read_param_set(&dir.join("critic_target.pset"))?;
    Ok((
        DdpgAgent {
            actor_spec,
            actor,
            actor_target,
            critic_spec,
            critic,
            critic_target,
            gamma: meta.gamma,
            xi: meta.xi,
        },
        meta,
    ))
}
