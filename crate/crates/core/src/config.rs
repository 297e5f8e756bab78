//! Run configuration: one TOML document, strict keys, with a digest of the
//! resolved values stamped into every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::oracle::DEFAULT_STEP;
use crate::physics::{InitialCondition, SwingParams};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Oracle step, s.
    pub step: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { step: DEFAULT_STEP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub swing: SwingParams,
    pub initial_condition: InitialCondition,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    pub simulate: SimulateConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.swing.validate()?;
        self.initial_condition.validate()?;
        self.train.validate()?;
        self.experiment.validate()?;
        if !(self.simulate.step > 0.0 && self.simulate.step.is_finite()) {
            return Err(Error::invalid(format!(
                "simulate.step must be positive, got {}",
                self.simulate.step
            )));
        }
        Ok(())
    }

    /// Digest of everything that affects results. The output directory is
    /// left out so the same run written to two places carries one digest.
    pub fn digest(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.output = OutputConfig::default();
        digest_of(&resolved)
    }
}

/// Hex sha256 of the TOML serialization of `value`.
pub fn digest_of<T: Serialize>(value: &T) -> Result<String> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::LossMode;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.epochs, 20_000);
        assert_eq!(cfg.train.adam.learning_rate, 1e-3);
        assert_eq!(cfg.train.weights.w_g, 0.01);
        assert_eq!(cfg.swing.b_susceptance, 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[swing]\nm_gg = 0.3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("m_gg"), "{err}");
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn round_trip_keeps_digest() {
        let text = "[train]\nmode = \"pinn\"\nepochs = 10\narchitecture = \"ci-small\"\n\n[swing]\np_m = 0.14\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.train.mode, LossMode::Pinn);
        let again = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest().unwrap(), again.digest().unwrap());
        assert_ne!(cfg.digest().unwrap(), RunConfig::default().digest().unwrap());
        assert_eq!(cfg.digest().unwrap().len(), 64);
        let mut moved = cfg.clone();
        moved.output.out_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.digest().unwrap(), cfg.digest().unwrap());
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = RunConfig::from_toml_str("[train]\nepochs = 0\n").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
