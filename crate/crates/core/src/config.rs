//! Experiment configuration files (TOML).
//!
//! ```toml
//! [data]
//! path = "data"                 # dataset directory, relative to this file
//!
//! [split]
//! ratios = [0.6, 0.2, 0.2]
//! seed = 0
//!
//! [model]
//! fusion = "mrrf"
//! fusion_dim = 8
//! ranks = [3, 3, 3]
//! encoders = [
//!   { kind = "mlp", hidden = 16, out = 4 },
//!   { kind = "mlp", hidden = 16, out = 4 },
//!   { kind = "meanpool", out = 4 },
//! ]
//!
//! [train]
//! epochs = 100
//! batch_size = 32
//! learning_rate = 0.005
//! seed = 1
//! patience = 10
//! ```
//!
//! Instead of `path`, `[data.synthetic]` with `samples`, `seed`, and a
//! `[data.synthetic.spec]` table generates the data in memory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub spec: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
}

fn default_ratios() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: default_ratios(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Initialization seed; defaults to the training seed.
    #[serde(default)]
    pub model_seed: Option<u64>,
    /// Used when the command line gives no output directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data and output paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [cfg.data.path.as_mut(), cfg.output_dir.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => {
                s.spec.validate()?;
                if s.samples == 0 {
                    return Err(Error::Config("synthetic sample count must be positive".into()));
                }
            }
            _ => return Err(Error::Config("[data] needs exactly one of path or synthetic".into())),
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn model_seed(&self) -> u64 {
        self.model_seed.unwrap_or(self.train.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
