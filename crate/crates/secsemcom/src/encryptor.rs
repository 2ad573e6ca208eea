//! Pluggable encryption/decryption strategy interfaces and the name-keyed
//! registry the harness selects from at runtime.
//!
//! An [`Encryptor`] transforms the transmitter's latent block before it hits
//! the channel and reports what the paired decryptor needs to know as
//! [`EncryptionInfo`]. A [`Decryptor`] turns the received block back into a
//! latent estimate. "Plugging" and "unplugging" the modules around a frozen
//! transceiver is just swapping strategies, the identity pair included.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::arn::ArnModel;
use crate::ddpm::DdpmDecryptor;
use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Side information produced by the transmitter-side module, consumed by the
/// receiver-side module (conveyed out-of-band in the experiment config).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EncryptionInfo {
    /// No encryption module inserted.
    Identity,
    /// Gaussian artificial noise mixed with power-allocation factor `u`.
    Agn { u: f64 },
    /// Adversarial residual perturbation with measured per-dimension power.
    Arn { delta_power: f64 },
}

pub trait Encryptor: Send + Sync {
    fn name(&self) -> &'static str;

    /// Latent batch in, channel input batch plus side info out.
    fn encrypt(&self, x: &Tensor, rng: &mut SeedRng) -> Result<(Tensor, EncryptionInfo)>;
}

pub trait Decryptor: Send + Sync {
    fn name(&self) -> &'static str;

    /// Received batch plus side info in, latent estimate out.
    fn decrypt(&self, y_bob: &Tensor, info: &EncryptionInfo, sigma2_bob: f64) -> Result<Tensor>;
}

/// Transparent transmitter module ("Tx: unplug").
pub struct IdentityEncryptor;

impl Encryptor for IdentityEncryptor {
    fn name(&self) -> &'static str {
        "none"
    }

    fn encrypt(&self, x: &Tensor, _rng: &mut SeedRng) -> Result<(Tensor, EncryptionInfo)> {
        Ok((x.clone(), EncryptionInfo::Identity))
    }
}

/// Transparent receiver module ("Rx: unplug").
pub struct IdentityDecryptor;

impl Decryptor for IdentityDecryptor {
    fn name(&self) -> &'static str {
        "none"
    }

    fn decrypt(&self, y_bob: &Tensor, _info: &EncryptionInfo, _sigma2_bob: f64) -> Result<Tensor> {
        Ok(y_bob.clone())
    }
}

/// Everything a strategy factory may need. Fields are optional; a factory
/// errors if its requirement is missing.
#[derive(Default, Clone)]
pub struct BuildInputs {
    pub u: Option<f64>,
    pub arn: Option<Arc<ArnModel>>,
    pub ddpm: Option<Arc<DdpmDecryptor>>,
}

type EncryptorFactory = fn(&BuildInputs) -> Result<Box<dyn Encryptor>>;
type DecryptorFactory = fn(&BuildInputs) -> Result<Box<dyn Decryptor>>;

/// Name-keyed factories for both module kinds.
pub struct PluggableRegistry {
    encryptors: BTreeMap<&'static str, EncryptorFactory>,
    decryptors: BTreeMap<&'static str, DecryptorFactory>,
}

impl Default for PluggableRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PluggableRegistry {
    /// Registry with the built-in strategies: encryptors `none`, `agn`,
    /// `arn`; decryptors `none`, `ddpm`.
    pub fn builtin() -> Self {
        let mut reg = Self {
            encryptors: BTreeMap::new(),
            decryptors: BTreeMap::new(),
        };
        reg.register_encryptor("none", |_| Ok(Box::new(IdentityEncryptor)));
        reg.register_encryptor("agn", |inputs| {
            let u = inputs
                .u
                .ok_or_else(|| Error::invalid("agn encryptor needs a power allocation u"))?;
            Ok(Box::new(crate::agn::AgnEncryptor::new(
                crate::agn::PowerAllocation::new(u)?,
            )))
        });
        reg.register_encryptor("arn", |inputs| {
            let arn = inputs
                .arn
                .clone()
                .ok_or_else(|| Error::invalid("arn encryptor needs a trained ArnModel"))?;
            Ok(Box::new(crate::arn::ArnEncryptor::new(arn)))
        });
        reg.register_decryptor("none", |_| Ok(Box::new(IdentityDecryptor)));
        reg.register_decryptor("ddpm", |inputs| {
            let ddpm = inputs
                .ddpm
                .clone()
                .ok_or_else(|| Error::invalid("ddpm decryptor needs a trained NENN checkpoint"))?;
            Ok(Box::new(SharedDdpm(ddpm)))
        });
        reg
    }

    pub fn register_encryptor(&mut self, name: &'static str, factory: EncryptorFactory) {
        self.encryptors.insert(name, factory);
    }

    pub fn register_decryptor(&mut self, name: &'static str, factory: DecryptorFactory) {
        self.decryptors.insert(name, factory);
    }

    pub fn encryptor_names(&self) -> Vec<&'static str> {
        self.encryptors.keys().copied().collect()
    }

    pub fn decryptor_names(&self) -> Vec<&'static str> {
        self.decryptors.keys().copied().collect()
    }

    pub fn build_encryptor(&self, name: &str, inputs: &BuildInputs) -> Result<Box<dyn Encryptor>> {
        let factory = self.encryptors.get(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown encryptor '{name}' (known: {:?})",
                self.encryptor_names()
            ))
        })?;
        factory(inputs)
    }

    pub fn build_decryptor(&self, name: &str, inputs: &BuildInputs) -> Result<Box<dyn Decryptor>> {
        let factory = self.decryptors.get(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown decryptor '{name}' (known: {:?})",
                self.decryptor_names()
            ))
        })?;
        factory(inputs)
    }
}

struct SharedDdpm(Arc<DdpmDecryptor>);

impl Decryptor for SharedDdpm {
    fn name(&self) -> &'static str {
        "ddpm"
    }

    fn decrypt(&self, y_bob: &Tensor, info: &EncryptionInfo, sigma2_bob: f64) -> Result<Tensor> {
        self.0.decrypt(y_bob, info, sigma2_bob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pair_round_trips() {
        let mut rng = SeedRng::from_seed(0);
        let x = Tensor::row(&[0.1, -0.5, 2.0]);
        let (y, info) = IdentityEncryptor.encrypt(&x, &mut rng).unwrap();
        assert_eq!(info, EncryptionInfo::Identity);
        let back = IdentityDecryptor.decrypt(&y, &info, 0.5).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn builtin_names_are_registered() {
        let reg = PluggableRegistry::builtin();
        assert_eq!(reg.encryptor_names(), vec!["agn", "arn", "none"]);
        assert_eq!(reg.decryptor_names(), vec!["ddpm", "none"]);
    }

    #[test]
    fn unknown_name_is_an_error() {
        let reg = PluggableRegistry::builtin();
        assert!(reg.build_encryptor("rot13", &BuildInputs::default()).is_err());
    }

    #[test]
    fn agn_factory_requires_u() {
        let reg = PluggableRegistry::builtin();
        assert!(reg.build_encryptor("agn", &BuildInputs::default()).is_err());
        let inputs = BuildInputs {
            u: Some(0.5),
            ..Default::default()
        };
        let enc = reg.build_encryptor("agn", &inputs).unwrap();
        assert_eq!(enc.name(), "agn");
    }
}
