//! Command-line driver: train the individual components, run the evaluation
//! sweeps, and render figures.
//!
//! Every command takes an optional `--config <toml>`; flags override the
//! config. Failures print one machine-readable JSON line on stderr and exit
//! nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use secsemcom::arn::{load_arn, save_arn, train_arn, ArnMeta, FrozenPipeline};
use secsemcom::channel::snr_db_to_sigma2;
use secsemcom::config::ExperimentConfig;
use secsemcom::dataset::{load_dataset, Dataset, DatasetName, Split};
use secsemcom::ddpg::{load_ddpg, save_ddpg, train_ddpg, DdpgMeta, RewardContext};
use secsemcom::ddpm::{load_nenn, save_nenn, train_nenn, DdpmDecryptor, NennMeta, NoiseSchedule};
use secsemcom::error::{Error, Result};
use secsemcom::eve::{eve_accuracy, load_eve, save_eve, train_eve, EveMeta};
use secsemcom::semcom::{eval_comm_mse, load_semcom, save_semcom, train_semcom, SemcomMeta};
use secsemcom::sweep::{
    run_ddpg_vs_grid, run_scenario1_sweep, run_scenario2_sweep, run_zero_noise_psr_sweep,
    write_grid_rows, Artifacts,
};
use secsemcom::SeedRng;

#[derive(Parser)]
#[command(
    name = "secsemcom",
    about = "Secure semantic communication: training, sweeps and figures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; omitted fields use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset override: mnist | fashion_mnist | cifar10 | synth.
    #[arg(long)]
    dataset: Option<String>,
    /// Train-split subset size override (0 = all).
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline semantic transceiver.
    TrainSemcom {
        #[command(flatten)]
        common: Common,
    },
    /// Train the diffusion noise-estimation network on transmitter latents.
    TrainNenn {
        #[command(flatten)]
        common: Common,
        /// Semantic transceiver checkpoint directory.
        #[arg(long)]
        semcom: PathBuf,
    },
    /// Train the eavesdropping classifier on unprotected transmissions.
    TrainEve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
    },
    /// Train the DDPG power allocator against the full objective.
    TrainDdpg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
        /// NENN/decryptor checkpoint directory.
        #[arg(long)]
        nenn: PathBuf,
    },
    /// Train the adversarial-residual perturbation generator.
    TrainArn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
        #[arg(long)]
        nenn: PathBuf,
        #[arg(long)]
        eve: PathBuf,
        /// Power budget override (defaults to the config value).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Scenario-I sweep: plug/unplug grid over the Eve SNR axis.
    EvalScenario1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
        #[arg(long)]
        nenn: PathBuf,
        #[arg(long)]
        ddpg: PathBuf,
    },
    /// Allocator objective vs exhaustive grid search on the held-out states.
    EvalDdpgGrid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
        #[arg(long)]
        nenn: PathBuf,
        #[arg(long)]
        ddpg: PathBuf,
    },
    /// Scenario-II sweeps: Eve-SNR grid, PSR grid, and the zero-noise run.
    EvalScenario2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        semcom: PathBuf,
        #[arg(long)]
        nenn: PathBuf,
        #[arg(long)]
        eve: PathBuf,
        #[arg(long)]
        arn: PathBuf,
        /// Optional per-PSR generator checkpoints for the zero-noise run,
        /// formatted `<psr_db>:<dir>`; other points scale the main one.
        #[arg(long = "psr-arn")]
        psr_arn: Vec<String>,
    },
    /// Render figures from the sweep CSVs in a metrics directory.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Directory containing scenario1.csv / ddpg_grid.csv / scenario2.csv.
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": err.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(name) = &common.dataset {
        config.dataset = DatasetName::parse(name)?;
    }
    if let Some(subset) = common.subset {
        config.train_subset = subset;
    }
    config.validate()?;
    Ok(config)
}

fn load_split(config: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let data = load_dataset(
        config.dataset,
        split,
        Path::new(&config.data_dir),
        config.seed,
    )?;
    let subset = match split {
        Split::Train => config.train_subset,
        Split::Test => config.test_subset,
    };
    Ok(if subset > 0 { data.take(subset) } else { data })
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(&config.out_dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainSemcom { common } => {
            let config = effective_config(&common)?;
            let train = load_split(&config, Split::Train)?;
            let test = load_split(&config, Split::Test)?;
            let mut rng = SeedRng::from_seed(config.seed);
            let (model, history) = train_semcom(&train, Some(&test), &config.semcom, &mut rng)?;
            let dir = out_dir(&config).join("semcom");
            save_semcom(
                &dir,
                &model,
                &SemcomMeta {
                    dataset: config.dataset.as_str().into(),
                    source_len: model.source_len(),
                    latent_len: model.latent_len(),
                    train_snr_db: config.semcom.train_snr_db,
                    seed: config.seed,
                    norm: config.semcom.norm,
                },
            )?;
            let mse = eval_comm_mse(
                &model,
                &test,
                snr_db_to_sigma2(config.semcom.train_snr_db),
                &mut SeedRng::from_seed(config.seed ^ 0xe7a1),
            )?;
            println!(
                "trained semcom: epochs {} final val {:.5} held-out mse @{} dB {:.5} -> {}",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                config.semcom.train_snr_db,
                mse,
                dir.display()
            );
            Ok(())
        }
        Command::TrainNenn { common, semcom } => {
            let config = effective_config(&common)?;
            let train = load_split(&config, Split::Train)?;
            let (model, _) = load_semcom(&semcom)?;
            let latents = model.encode(&train.images)?;
            let sched = NoiseSchedule::linear(
                config.nenn.t_steps,
                config.nenn.beta_start,
                config.nenn.beta_end,
            )?;
            let mut rng = SeedRng::from_seed(config.seed.wrapping_add(1));
            let (nenn, history) = train_nenn(&latents, &sched, &config.nenn, &mut rng)?;
            let decryptor = DdpmDecryptor::new(sched, nenn);
            let dir = out_dir(&config).join("nenn");
            save_nenn(
                &dir,
                &decryptor,
                &NennMeta {
                    t_steps: config.nenn.t_steps,
                    beta_start: config.nenn.beta_start,
                    beta_end: config.nenn.beta_end,
                    latent_len: model.latent_len(),
                    seed: config.seed,
                },
            )?;
            println!(
                "trained nenn: epochs {} final loss {:.3} -> {}",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                dir.display()
            );
            Ok(())
        }
        Command::TrainEve { common, semcom } => {
            let config = effective_config(&common)?;
            let train = load_split(&config, Split::Train)?;
            let test = load_split(&config, Split::Test)?;
            let (model, _) = load_semcom(&semcom)?;
            let mut rng = SeedRng::from_seed(config.seed.wrapping_add(2));
            let eve = train_eve(&model, &train, &config.eve, &mut rng)?;
            let latents = model.encode(&test.images)?;
            let clean_acc = eve_accuracy(&eve, &latents, &test.labels)?;
            let dir = out_dir(&config).join("eve");
            save_eve(
                &dir,
                &eve,
                &EveMeta {
                    num_classes: eve.num_classes,
                    latent_len: model.latent_len(),
                    snr_db_range: config.eve.snr_db_range,
                    seed: config.seed,
                    label_map: (0..eve.num_classes).map(|c| c.to_string()).collect(),
                },
            )?;
            println!(
                "trained eve: clean-channel accuracy {clean_acc:.3} -> {}",
                dir.display()
            );
            Ok(())
        }
        Command::TrainDdpg {
            common,
            semcom,
            nenn,
        } => {
            let config = effective_config(&common)?;
            let train = load_split(&config, Split::Train)?;
            let (model, _) = load_semcom(&semcom)?;
            let (ddpm, _) = load_nenn(&nenn)?;
            let ctx = RewardContext {
                semcom: &model,
                ddpm: &ddpm,
                lambdas: config.lambdas,
                images: &train.images,
                mi_pairs: config.ddpg.mi_pairs,
            };
            let mut rng = SeedRng::from_seed(config.seed.wrapping_add(3));
            let (agent, log) = train_ddpg(&ctx, &config.ddpg, &mut rng)?;
            let dir = out_dir(&config).join("ddpg");
            save_ddpg(
                &dir,
                &agent,
                &DdpgMeta {
                    gamma: config.ddpg.gamma,
                    xi: config.ddpg.xi,
                    snr_db_range: config.ddpg.snr_db_range,
                    lambdas: config.lambdas,
                    seed: config.seed,
                },
            )?;
            let log_path = dir.join("train_log.csv");
            write_train_log(&log_path, &log)?;
            println!(
                "trained ddpg: {} steps, final reward {:.3} -> {}",
                log.len(),
                log.last().map(|s| s.reward).unwrap_or(f64::NAN),
                dir.display()
            );
            Ok(())
        }
        Command::TrainArn {
            common,
            semcom,
            nenn,
            eve,
            epsilon,
        } => {
            let config = effective_config(&common)?;
            let train = load_split(&config, Split::Train)?;
            let (model, _) = load_semcom(&semcom)?;
            let (ddpm, _) = load_nenn(&nenn)?;
            let (eve_model, _) = load_eve(&eve)?;
            let mut arn_config = config.arn.clone();
            if let Some(eps) = epsilon {
                arn_config.epsilon = eps;
            }
            let pipeline = FrozenPipeline {
                semcom: &model,
                ddpm: &ddpm,
                eve: &eve_model,
            };
            let mut rng = SeedRng::from_seed(config.seed.wrapping_add(4));
            let arn = train_arn(&train, &pipeline, &arn_config, &mut rng)?;
            let dir = out_dir(&config).join("arn");
            save_arn(
                &dir,
                &arn,
                &ArnMeta {
                    epsilon: arn_config.epsilon,
                    measured_delta_power: arn.measured_delta_power,
                    delta_sigma2_bob: arn_config.delta_sigma2_bob,
                    delta_sigma2_eve: arn_config.delta_sigma2_eve,
                    lambdas: arn_config.lambdas,
                    seed: config.seed,
                },
            )?;
            println!(
                "trained arn: measured delta power {:.4} (PSR {:.1} dB) -> {}",
                arn.measured_delta_power,
                secsemcom::arn::psr_db(arn.measured_delta_power),
                dir.display()
            );
            Ok(())
        }
        Command::EvalScenario1 {
            common,
            semcom,
            nenn,
            ddpg,
        } => {
            let config = effective_config(&common)?;
            let test = load_split(&config, Split::Test)?;
            let artifacts = Artifacts {
                semcom: load_semcom(&semcom)?.0,
                ddpm: Arc::new(load_nenn(&nenn)?.0),
                agent: Some(load_ddpg(&ddpg)?.0),
                eve: None,
                arn: None,
            };
            let rows = run_scenario1_sweep(&artifacts, &config, &test)?;
            let path = out_dir(&config).join("scenario1.csv");
            secsemcom::metrics::write_rows(&path, &rows)?;
            println!("wrote {} rows -> {}", rows.len(), path.display());
            Ok(())
        }
        Command::EvalDdpgGrid {
            common,
            semcom,
            nenn,
            ddpg,
        } => {
            let config = effective_config(&common)?;
            let test = load_split(&config, Split::Test)?;
            let artifacts = Artifacts {
                semcom: load_semcom(&semcom)?.0,
                ddpm: Arc::new(load_nenn(&nenn)?.0),
                agent: Some(load_ddpg(&ddpg)?.0),
                eve: None,
                arn: None,
            };
            let rows = run_ddpg_vs_grid(&artifacts, &config, &test)?;
            let path = out_dir(&config).join("ddpg_grid.csv");
            write_grid_rows(&path, &rows)?;
            let within = rows.iter().filter(|r| r.gap_ratio <= 0.10).count();
            println!(
                "wrote {} states path {} | {}/{} within 10% of grid optimum",
                rows.len(),
                path.display(),
                within,
                rows.len()
            );
            Ok(())
        }
        Command::EvalScenario2 {
            common,
            semcom,
            nenn,
            eve,
            arn,
            psr_arn,
        } => {
            let config = effective_config(&common)?;
            let test = load_split(&config, Split::Test)?;
            let main_arn = Arc::new(load_arn(&arn)?.0);
            let artifacts = Artifacts {
                semcom: load_semcom(&semcom)?.0,
                ddpm: Arc::new(load_nenn(&nenn)?.0),
                agent: None,
                eve: Some(load_eve(&eve)?.0),
                arn: Some(Arc::clone(&main_arn)),
            };
            let rows = run_scenario2_sweep(&artifacts, &config, &test)?;
            let path = out_dir(&config).join("scenario2.csv");
            secsemcom::metrics::write_rows(&path, &rows)?;
            println!("wrote {} rows -> {}", rows.len(), path.display());

            let overrides = parse_psr_overrides(&psr_arn)?;
            let mut arn_for_psr = |psr: f64| -> Result<Arc<secsemcom::arn::ArnModel>> {
                for (db, dir) in &overrides {
                    if (db - psr).abs() < 1e-9 {
                        return Ok(Arc::new(load_arn(dir)?.0));
                    }
                }
                Ok(Arc::clone(&main_arn))
            };
            let zn_rows = run_zero_noise_psr_sweep(&artifacts, &config, &test, &mut arn_for_psr)?;
            let zn_path = out_dir(&config).join("scenario2_zero_noise.csv");
            secsemcom::metrics::write_rows(&zn_path, &zn_rows)?;
            println!("wrote {} rows -> {}", zn_rows.len(), zn_path.display());
            Ok(())
        }
        Command::Plot { common, metrics } => {
            let config = effective_config(&common)?;
            let written = secsemcom::plot::emit_plots(&metrics, &out_dir(&config))?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn parse_psr_overrides(args: &[String]) -> Result<Vec<(f64, PathBuf)>> {
    args.iter()
        .map(|s| {
            let (db, dir) = s
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("bad --psr-arn '{s}', want <psr_db>:<dir>")))?;
            let db: f64 = db
                .parse()
                .map_err(|_| Error::invalid(format!("bad PSR value in --psr-arn '{s}'")))?;
            Ok((db, PathBuf::from(dir)))
        })
        .collect()
}

fn write_train_log(path: &Path, log: &[secsemcom::ddpg::TrainStep]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", path.display())))?;
    for step in log {
        writer
            .serialize(step)
            .map_err(|e| Error::format(format!("csv write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::format(format!("csv flush failed: {e}")))?;
    Ok(())
}
