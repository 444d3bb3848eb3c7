//! Run configuration, read from TOML.
//!
//! Every field is optional and falls back to the default shown by
//! `RunConfig::default()`; unknown keys are rejected.
//!
//! ```toml
//! seed = 42
//! precision = "f64"          # or "f32"
//! output_dir = "runs/default"
//!
//! [data]
//! # dir = "data/desk"        # items.tsv + interactions.tsv; synthetic when absent
//! test_fraction = 0.2
//! val_fraction = 0.1
//! n_cold_items = 16
//! [data.synthetic]
//! n_users = 500
//! n_items = 80
//!
//! [model]
//! d = 16
//! cf_variant = "recurrent"   # or "attention"
//!
//! [train]
//! mode = "gram"              # e2e | gram | no_content | no_finetune
//! latency = "1S"             # 1S | 10S | 0.5E | 1E | N=<int>
//! cf_batch_size = 16
//! ce_batch_size = 8          # 0 = whole cache
//! [train.optimizer_ce]
//! kind = "adam"
//! lr = 1e-4
//!
//! [verify]
//! trials = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, io, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::seed::Seeds;
use crate::training::{TrainConfig, VerifyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; a synthetic corpus is generated when unset.
    pub dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Fraction of users held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining users held out for validation.
    pub val_fraction: f64,
    /// Items made cold: present in test, absent from training.
    pub n_cold_items: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: SyntheticConfig::default(),
            test_fraction: 0.2,
            val_fraction: 0.1,
            n_cold_items: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            precision: Precision::F64,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let fractions = [
            ("test_fraction", self.data.test_fraction),
            ("val_fraction", self.data.val_fraction),
        ];
        for (name, f) in fractions {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("data.{name} {f} outside [0, 1)")));
            }
        }
        if self.data.dir.is_none() {
            self.data.synthetic.validate()?;
            if self.data.synthetic.vocab > self.model.vocab {
                return Err(Error::Config(format!(
                    "model.vocab {} is smaller than the synthetic vocabulary {}",
                    self.model.vocab, self.data.synthetic.vocab
                )));
            }
        }
        Ok(())
    }

    /// Load `data.dir`, or generate the synthetic corpus from the data seed.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data.dir {
            Some(dir) => io::load(dir),
            None => Ok(generate_synthetic(&self.data.synthetic, self.seeds().data)?.dataset),
        }
    }
}
