//! Experiment configuration shared by every CLI command, stored as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{DbMode, NoiseSpec, DEFAULT_LEVELS_DB, DEFAULT_REFERENCE_STD};
use crate::trainer::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory of `[age]_[gender]_[race]_[datetime].[ext]` images.
    pub data_dir: Option<PathBuf>,
    /// Manifest written by `prepare`.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub levels_db: Vec<f64>,
    pub reference_std: f64,
    pub db_mode: DbMode,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            levels_db: DEFAULT_LEVELS_DB.to_vec(),
            reference_std: DEFAULT_REFERENCE_STD,
            db_mode: DbMode::Power,
            seed: 5,
        }
    }
}

impl NoiseConfig {
    /// Base spec for a sweep; the level is filled in per row.
    pub fn base_spec(&self) -> Result<NoiseSpec> {
        let spec = NoiseSpec {
            level_db: 0.0,
            reference_std: self.reference_std,
            seed: self.seed,
            mode: self.db_mode,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes the fully resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml_string()?)?;
        Ok(path)
    }
}
