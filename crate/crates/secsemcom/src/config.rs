//! Experiment configuration: the one serializable record driving training
//! runs, sweeps and plots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetName;
use crate::ddpg::DdpgConfig;
use crate::ddpm::NennConfig;
use crate::error::{Error, Result};
use crate::eve::EveConfig;
use crate::semcom::SemcomConfig;

/// Objective weights `(com, pri, cov)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub com: f64,
    pub pri: f64,
    pub cov: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            com: 10.0,
            pri: 0.25,
            cov: 1.0,
        }
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        if [self.com, self.pri, self.cov]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::invalid("objective weights must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Unknown eavesdropper: AGN encryption, DDPG power allocation.
    Agn,
    /// Known eavesdropper: adversarial residual perturbation.
    Arn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub scenario: Scenario,
    /// Where dataset files live (ignored by the synthetic set).
    pub data_dir: String,
    /// Subset sizes; 0 means "use everything available".
    pub train_subset: usize,
    pub test_subset: usize,
    pub seed: u64,
    pub out_dir: String,

    /// Fixed legitimate-link SNR for the sweeps.
    pub snr_bob_db: f64,
    /// Eavesdropper-link SNR grid for the scenario sweeps.
    pub snr_eve_grid_db: Vec<f64>,
    /// Bob-SNR grid for the allocator-vs-grid comparison.
    pub snr_bob_grid_db: Vec<f64>,
    /// PSR grid (dB) for the Scenario-II sweeps.
    pub psr_grid_db: Vec<f64>,
    /// Samples used per evaluated grid point.
    pub eval_batch: usize,
    /// Joint pairs for each mutual-information estimate.
    pub mi_pairs: usize,

    pub lambdas: Lambdas,
    pub semcom: SemcomConfig,
    pub nenn: NennConfig,
    pub eve: EveConfig,
    pub arn: crate::arn::ArnConfig,
    pub ddpg: DdpgConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Synth,
            scenario: Scenario::Agn,
            data_dir: "data".into(),
            train_subset: 10_000,
            test_subset: 2_000,
            seed: 17,
            out_dir: "out".into(),
            snr_bob_db: 5.0,
            snr_eve_grid_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            snr_bob_grid_db: vec![0.0, 5.0, 10.0],
            psr_grid_db: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0],
            eval_batch: 1024,
            mi_pairs: 1024,
            lambdas: Lambdas::default(),
            semcom: SemcomConfig::default(),
            nenn: NennConfig::default(),
            eve: EveConfig::default(),
            arn: crate::arn::ArnConfig::default(),
            ddpg: DdpgConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Missing(path.display().to_string()))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| Error::format(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::format(format!("config serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        if self.snr_eve_grid_db.is_empty() || self.snr_bob_grid_db.is_empty() {
            return Err(Error::invalid("SNR grids must be non-empty"));
        }
        if self.psr_grid_db.is_empty() {
            return Err(Error::invalid("PSR grid must be non-empty"));
        }
        if self.eval_batch < 2 || self.mi_pairs < 2 {
            return Err(Error::invalid("eval_batch and mi_pairs must be >= 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        config.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded.lambdas, config.lambdas);
        assert_eq!(loaded.snr_eve_grid_db, config.snr_eve_grid_db);
        assert_eq!(loaded.dataset, config.dataset);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.toml");
        std::fs::write(&path, "seed = 99\nsnr_bob_db = 10.0\n").unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.snr_bob_db, 10.0);
        assert_eq!(loaded.lambdas, Lambdas::default());
    }

    #[test]
    fn empty_grid_rejected() {
        let mut config = ExperimentConfig::default();
        config.snr_eve_grid_db.clear();
        assert!(config.validate().is_err());
    }
}
