//! Experiment orchestration: the plug/unplug sweeps behind the paper-style
//! figures, and the allocator-vs-grid comparison.
//!
//! Every grid point derives its own RNG stream from the run seed, and the
//! four plug/unplug combinations at a point share their noise draws, so
//! plugged-vs-unplugged comparisons are paired and runs are reproducible.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agn::covertness_mse;
use crate::arn::ArnModel;
use crate::channel::{awgn, snr_db_to_sigma2};
use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::ddpg::{evaluate_objective, exhaustive_search, ChannelState, DdpgAgent, RewardContext};
use crate::ddpm::DdpmDecryptor;
use crate::encryptor::{BuildInputs, EncryptionInfo, PluggableRegistry};
use crate::error::{Error, Result};
use crate::eve::{eve_accuracy, EveClassifier};
use crate::metrics::MetricsRow;
use crate::mi::mi_upper_bound;
use crate::rng::SeedRng;
use crate::semcom::{comm_mse, SemcomModel};
use crate::tensor::Tensor;

/// Trained components a sweep draws on.
pub struct Artifacts {
    pub semcom: SemcomModel,
    pub ddpm: Arc<DdpmDecryptor>,
    pub agent: Option<DdpgAgent>,
    pub eve: Option<EveClassifier>,
    pub arn: Option<Arc<ArnModel>>,
}

fn head(t: &Tensor, n: usize) -> Tensor {
    let n = n.min(t.rows());
    Tensor::from_vec(n, t.cols(), t.data()[..n * t.cols()].to_vec())
}

/// Scenario I (Fig. 4 analogue): Bob fixed, Eve swept, all four plug/unplug
/// combinations, AGN power chosen by the trained allocator per point.
pub fn run_scenario1_sweep(
    artifacts: &Artifacts,
    config: &ExperimentConfig,
    test: &Dataset,
) -> Result<Vec<MetricsRow>> {
    let agent = artifacts
        .agent
        .as_ref()
        .ok_or_else(|| Error::Missing("ddpg agent checkpoint".into()))?;
    let registry = PluggableRegistry::builtin();
    let sigma2_bob = snr_db_to_sigma2(config.snr_bob_db);
    let eval = test.take(config.eval_batch);
    let x = artifacts.semcom.encode(&eval.images)?;

    let mut rows = Vec::new();
    for (k, &snr_eve) in config.snr_eve_grid_db.iter().enumerate() {
        let sigma2_eve = snr_db_to_sigma2(snr_eve);
        let state = ChannelState::new(sigma2_bob, sigma2_eve)?;
        let u = agent.act(&state, None, &mut SeedRng::from_seed(config.seed))?;
        let point_rng = SeedRng::from_seed(config.seed).split(1000 + k as u64);

        for &tx_plug in &[true, false] {
            for &rx_plug in &[true, false] {
                // shared streams: 0 = encryptor noise, 1 = Bob link, 2 = Eve link
                let (x_prime, info) = if tx_plug {
                    let enc = registry.build_encryptor(
                        "agn",
                        &BuildInputs {
                            u: Some(u),
                            ..Default::default()
                        },
                    )?;
                    enc.encrypt(&x, &mut point_rng.split(0))?
                } else {
                    (x.clone(), EncryptionInfo::Identity)
                };
                let y_bob = awgn(&x_prime, sigma2_bob, &mut point_rng.split(1))?;
                let y_eve = awgn(&x_prime, sigma2_eve, &mut point_rng.split(2))?;

                let x_bob = if rx_plug {
                    artifacts.ddpm.decrypt(&y_bob, &info, sigma2_bob)?
                } else {
                    y_bob
                };
                let s_hat = artifacts.semcom.decode(&x_bob)?;
                let mse = comm_mse(&eval.images, &s_hat)?;

                let u_eff = if tx_plug { u } else { 1.0 };
                let n_mi = config.mi_pairs.min(x.rows());
                let mi = if (sigma2_eve + 1.0 - u_eff) > 0.0 {
                    Some(
                        mi_upper_bound(&head(&x, n_mi), &head(&y_eve, n_mi), u_eff, sigma2_eve)?
                            .nats,
                    )
                } else {
                    None
                };
                let cov = covertness_mse(&x, &x_prime)?;

                rows.push(MetricsRow {
                    scenario: "agn".into(),
                    dataset: config.dataset.as_str().into(),
                    tx_plug,
                    rx_plug,
                    snr_bob_db: config.snr_bob_db,
                    snr_eve_db: snr_eve,
                    u: tx_plug.then_some(u),
                    psr_db: None,
                    comm_mse: mse,
                    mi_upper_nats: mi,
                    covertness_mse: cov,
                    eve_accuracy: None,
                    seed: config.seed,
                });
            }
        }
    }
    Ok(rows)
}

/// One state of the allocator-vs-exhaustive-search comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub snr_bob_db: f64,
    pub snr_eve_db: f64,
    pub u_actor: f64,
    pub j_actor: f64,
    pub u_grid: f64,
    pub j_grid: f64,
    pub gap_ratio: f64,
    pub seed: u64,
}

/// Fig. 5 analogue: actor objective vs 0.01-step grid optimum on the held-out
/// state grid. Objective evaluations at one state share an RNG stream, so the
/// comparison is paired.
pub fn run_ddpg_vs_grid(
    artifacts: &Artifacts,
    config: &ExperimentConfig,
    test: &Dataset,
) -> Result<Vec<GridRow>> {
    let agent = artifacts
        .agent
        .as_ref()
        .ok_or_else(|| Error::Missing("ddpg agent checkpoint".into()))?;
    let eval = test.take(config.eval_batch);
    let ctx = RewardContext {
        semcom: &artifacts.semcom,
        ddpm: &artifacts.ddpm,
        lambdas: config.lambdas,
        images: &eval.images,
        mi_pairs: config.mi_pairs,
    };

    let mut rows = Vec::new();
    for (i, &bob_db) in config.snr_bob_grid_db.iter().enumerate() {
        for (j, &eve_db) in config.snr_eve_grid_db.iter().enumerate() {
            let state = ChannelState::new(snr_db_to_sigma2(bob_db), snr_db_to_sigma2(eve_db))?;
            let state_seed = config.seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9e3779b9);

            let u_actor = agent.act(&state, None, &mut SeedRng::from_seed(config.seed))?;
            let j_actor = evaluate_objective(&state, u_actor, &ctx, &mut SeedRng::from_seed(state_seed))?
                .weighted(&config.lambdas);
            let mut objective = |u: f64| -> Result<f64> {
                Ok(
                    evaluate_objective(&state, u, &ctx, &mut SeedRng::from_seed(state_seed))?
                        .weighted(&config.lambdas),
                )
            };
            let (u_grid, j_grid) = exhaustive_search(&mut objective, 0.01)?;
            rows.push(GridRow {
                snr_bob_db: bob_db,
                snr_eve_db: eve_db,
                u_actor,
                j_actor,
                u_grid,
                j_grid,
                gap_ratio: (j_actor - j_grid).abs() / j_grid.abs().max(1e-12),
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_grid_rows(path: &std::path::Path, rows: &[GridRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::format(format!("csv write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::format(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn read_grid_rows(path: &std::path::Path) -> Result<Vec<GridRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|_| Error::Missing(path.display().to_string()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| Error::format(format!("csv parse failed: {e}")))?);
    }
    Ok(rows)
}

/// Evaluate one Scenario-II point with paired noise; `scale` is a post-hoc
/// amplitude factor on the perturbation.
#[allow(clippy::too_many_arguments)]
fn scenario2_point(
    artifacts: &Artifacts,
    eval: &Dataset,
    x: &Tensor,
    arn: &Arc<ArnModel>,
    scale: f64,
    tx_plug: bool,
    rx_plug: bool,
    sigma2_bob: f64,
    sigma2_eve: f64,
    point_rng: &SeedRng,
) -> Result<(f64, f64, f64)> {
    let eve = artifacts
        .eve
        .as_ref()
        .ok_or_else(|| Error::Missing("eve checkpoint".into()))?;

    let (x_prime, info) = if tx_plug {
        let enc = crate::arn::ArnEncryptor::with_scale(Arc::clone(arn), scale);
        crate::encryptor::Encryptor::encrypt(&enc, x, &mut point_rng.split(0))?
    } else {
        (x.clone(), EncryptionInfo::Identity)
    };
    let y_bob = awgn(&x_prime, sigma2_bob, &mut point_rng.split(1))?;
    let y_eve = awgn(&x_prime, sigma2_eve, &mut point_rng.split(2))?;

    let x_bob = if rx_plug {
        artifacts.ddpm.decrypt(&y_bob, &info, sigma2_bob)?
    } else {
        y_bob
    };
    let s_hat = artifacts.semcom.decode(&x_bob)?;
    let mse = comm_mse(&eval.images, &s_hat)?;
    let acc = eve_accuracy(eve, &y_eve, &eval.labels)?;
    let cov = covertness_mse(x, &x_prime)?;
    Ok((mse, acc, cov))
}

/// Scenario II sweeps: the Eve-SNR sweep at the configured PSR (Fig. 6
/// analogue) and the PSR sweep at matched link SNRs (Fig. 8 analogue), both
/// via a post-hoc amplitude scale on the trained perturbation.
pub fn run_scenario2_sweep(
    artifacts: &Artifacts,
    config: &ExperimentConfig,
    test: &Dataset,
) -> Result<Vec<MetricsRow>> {
    let arn = artifacts
        .arn
        .as_ref()
        .ok_or_else(|| Error::Missing("arn checkpoint".into()))?;
    let eval = test.take(config.eval_batch);
    let x = artifacts.semcom.encode(&eval.images)?;
    let sigma2_bob = snr_db_to_sigma2(config.snr_bob_db);
    let mut rows = Vec::new();

    // Eve-SNR sweep at the trained perturbation power.
    for (k, &snr_eve) in config.snr_eve_grid_db.iter().enumerate() {
        let sigma2_eve = snr_db_to_sigma2(snr_eve);
        let point_rng = SeedRng::from_seed(config.seed).split(2000 + k as u64);
        for &tx_plug in &[true, false] {
            for &rx_plug in &[true, false] {
                let (mse, acc, cov) = scenario2_point(
                    artifacts, &eval, &x, arn, 1.0, tx_plug, rx_plug, sigma2_bob, sigma2_eve,
                    &point_rng,
                )?;
                rows.push(MetricsRow {
                    scenario: "arn".into(),
                    dataset: config.dataset.as_str().into(),
                    tx_plug,
                    rx_plug,
                    snr_bob_db: config.snr_bob_db,
                    snr_eve_db: snr_eve,
                    u: None,
                    psr_db: tx_plug.then(|| crate::arn::psr_db(arn.measured_delta_power)),
                    comm_mse: mse,
                    mi_upper_nats: None,
                    covertness_mse: cov,
                    eve_accuracy: Some(acc),
                    seed: config.seed,
                });
            }
        }
    }

    // PSR sweep at snr_bob = snr_eve = the configured Bob SNR.
    let sigma2_eve = sigma2_bob;
    for (k, &psr) in config.psr_grid_db.iter().enumerate() {
        let target = crate::arn::psr_db_to_power(psr);
        let scale = (target / arn.measured_delta_power.max(1e-12)).sqrt();
        let point_rng = SeedRng::from_seed(config.seed).split(3000 + k as u64);
        for &rx_plug in &[true, false] {
            let (mse, acc, cov) = scenario2_point(
                artifacts, &eval, &x, arn, scale, true, rx_plug, sigma2_bob, sigma2_eve,
                &point_rng,
            )?;
            rows.push(MetricsRow {
                scenario: "arn".into(),
                dataset: config.dataset.as_str().into(),
                tx_plug: true,
                rx_plug,
                snr_bob_db: config.snr_bob_db,
                snr_eve_db: config.snr_bob_db,
                u: None,
                psr_db: Some(psr),
                comm_mse: mse,
                mi_upper_nats: None,
                covertness_mse: cov,
                eve_accuracy: Some(acc),
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

/// Zero-channel-noise PSR sweep (Fig. 7 analogue): `sigma2_bob = 0`, comm MSE
/// with and without the decryptor per PSR point.
///
/// `arn_for_psr` supplies the generator for each point. The spec for this run
/// leaves open whether the perturbation power tracks the budget at training
/// time or is scaled after; passing per-point budget-trained models or one
/// model (post-hoc scaled to the target power, the default in the CLI) are
/// both supported.
pub fn run_zero_noise_psr_sweep(
    artifacts: &Artifacts,
    config: &ExperimentConfig,
    test: &Dataset,
    arn_for_psr: &mut dyn FnMut(f64) -> Result<Arc<ArnModel>>,
) -> Result<Vec<MetricsRow>> {
    let eval = test.take(config.eval_batch);
    let x = artifacts.semcom.encode(&eval.images)?;
    let mut rows = Vec::new();
    for (k, &psr) in config.psr_grid_db.iter().enumerate() {
        let arn = arn_for_psr(psr)?;
        let target = crate::arn::psr_db_to_power(psr);
        let scale = (target / arn.measured_delta_power.max(1e-12)).sqrt();
        let point_rng = SeedRng::from_seed(config.seed).split(4000 + k as u64);
        for &rx_plug in &[true, false] {
            let (mse, acc, cov) = scenario2_point(
                artifacts,
                &eval,
                &x,
                &arn,
                scale,
                true,
                rx_plug,
                0.0,
                snr_db_to_sigma2(config.snr_bob_db),
                &point_rng,
            )?;
            rows.push(MetricsRow {
                scenario: "arn_zero_noise".into(),
                dataset: config.dataset.as_str().into(),
                tx_plug: true,
                rx_plug,
                // sigma2_bob = 0 has no finite dB value; the scenario tag and
                // this sentinel mark the noiseless run.
                snr_bob_db: 300.0,
                snr_eve_db: config.snr_bob_db,
                u: None,
                psr_db: Some(psr),
                comm_mse: mse,
                mi_upper_nats: None,
                covertness_mse: cov,
                eve_accuracy: Some(acc),
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}
