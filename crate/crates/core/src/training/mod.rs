//! E2E and GRAM trainers, baselines, optimizers, the pseudo-target cache and
//! the equivalence verifier.

mod cache;
mod optimizer;
mod run;
mod trainer;
mod verify;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use cache::{CacheEntry, PseudoTargetCache};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState, Schedule};
pub use run::{train, EpochRecord, TestMetrics, TrainOutcome};
pub use trainer::{GramOptions, ItemTable, StepReport, TrainerState, WindowStats};
pub use verify::{verify_equivalence, EquivalenceReport, TrialResult, VerifyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    E2e,
    #[default]
    Gram,
    NoContent,
    NoFinetune,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::E2e => "e2e",
            Mode::Gram => "gram",
            Mode::NoContent => "no_content",
            Mode::NoFinetune => "no_finetune",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "e2e" => Ok(Mode::E2e),
            "gram" => Ok(Mode::Gram),
            "no_content" | "nocontent" => Ok(Mode::NoContent),
            "no_finetune" | "nofinetune" => Ok(Mode::NoFinetune),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Accumulation window: a named preset or an explicit step count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Latency {
    /// `1S`
    #[default]
    OneStep,
    /// `10S`
    TenSteps,
    /// `0.5E`
    HalfEpoch,
    /// `1E`
    OneEpoch,
    /// `N=<int>`
    Steps(usize),
}

impl FromStr for Latency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_uppercase().as_str() {
            "1S" => return Ok(Latency::OneStep),
            "10S" => return Ok(Latency::TenSteps),
            "0.5E" => return Ok(Latency::HalfEpoch),
            "1E" => return Ok(Latency::OneEpoch),
            _ => {}
        }
        let digits = t
            .strip_prefix("N=")
            .or_else(|| t.strip_prefix("n="))
            .unwrap_or(t);
        match digits.parse::<usize>() {
            Ok(0) | Err(_) => Err(Error::Config(format!(
                "latency {s:?}: expected 1S, 10S, 0.5E, 1E or N=<positive int>"
            ))),
            Ok(n) => Ok(Latency::Steps(n)),
        }
    }
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Latency::OneStep => f.write_str("1S"),
            Latency::TenSteps => f.write_str("10S"),
            Latency::HalfEpoch => f.write_str("0.5E"),
            Latency::OneEpoch => f.write_str("1E"),
            Latency::Steps(n) => write!(f, "N={n}"),
        }
    }
}

impl Serialize for Latency {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Latency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Latency {
    /// Accumulation steps `N` for an epoch of `steps_per_epoch` updates.
    pub fn resolve(self, steps_per_epoch: usize) -> Result<usize> {
        if steps_per_epoch == 0 {
            return Err(Error::Config("an epoch needs at least one step".into()));
        }
        Ok(match self {
            Latency::OneStep => 1,
            Latency::TenSteps => 10,
            Latency::HalfEpoch => steps_per_epoch.div_ceil(2),
            Latency::OneEpoch => steps_per_epoch,
            Latency::Steps(n) if n > steps_per_epoch => {
                return Err(Error::Config(format!(
                    "N={n} exceeds the {steps_per_epoch} steps of an epoch; use 1E for whole-epoch windows"
                )))
            }
            Latency::Steps(n) => n,
        })
    }
}

/// Map a latency preset (`"1S"`, `"10S"`, `"0.5E"`, `"1E"` or `"N=<int>"`)
/// to an accumulation step count.
pub fn accumulation_latency(preset: &str, steps_per_epoch: usize) -> Result<usize> {
    preset.parse::<Latency>()?.resolve(steps_per_epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub latency: Latency,
    /// Literal per-step re-encoding instead of carrying cached pseudo-targets.
    pub recompute_encodings: bool,
    /// Users per CF mini-batch.
    pub cf_batch_size: usize,
    /// Items per CE regression mini-batch; 0 regresses the whole cache at once.
    pub ce_batch_size: usize,
    /// Passes over the cache per CE update phase.
    pub ce_epochs: usize,
    pub max_epochs: usize,
    /// Epochs without validation AUC improvement before stopping; 0 disables.
    pub patience: usize,
    pub optimizer_ce: OptimizerConfig,
    pub optimizer_cf: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gram,
            latency: Latency::OneStep,
            recompute_encodings: false,
            cf_batch_size: 16,
            ce_batch_size: 8,
            ce_epochs: 1,
            max_epochs: 50,
            patience: 10,
            optimizer_ce: OptimizerConfig::default(),
            optimizer_cf: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cf_batch_size == 0 {
            return Err(Error::Config("train.cf_batch_size must be positive".into()));
        }
        if self.ce_epochs == 0 {
            return Err(Error::Config("train.ce_epochs must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be positive".into()));
        }
        self.optimizer_ce.validate()?;
        self.optimizer_cf.validate()
    }

    pub fn gram_options(&self, accumulation_steps: usize) -> GramOptions {
        GramOptions {
            accumulation_steps,
            ce_batch_size: (self.ce_batch_size > 0).then_some(self.ce_batch_size),
            ce_epochs: self.ce_epochs,
            recompute_encodings: self.recompute_encodings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_at_37_steps() {
        let got: Vec<usize> = ["1S", "10S", "0.5E", "1E"]
            .iter()
            .map(|p| accumulation_latency(p, 37).unwrap())
            .collect();
        assert_eq!(got, vec![1, 10, 19, 37]);
    }

    #[test]
    fn explicit_steps() {
        assert_eq!(accumulation_latency("N=5", 37).unwrap(), 5);
        assert!(accumulation_latency("N=0", 37).is_err());
        assert!(accumulation_latency("N=38", 37).is_err());
        assert!(accumulation_latency("2E", 37).is_err());
        assert!(accumulation_latency("1S", 0).is_err());
    }

    #[test]
    fn latency_serde_roundtrip() {
        for l in [
            Latency::OneStep,
            Latency::TenSteps,
            Latency::HalfEpoch,
            Latency::OneEpoch,
            Latency::Steps(7),
        ] {
            let s = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<Latency>(&s).unwrap(), l);
        }
    }

    #[test]
    fn mode_parsing_accepts_dashes() {
        assert_eq!("no-content".parse::<Mode>().unwrap(), Mode::NoContent);
        assert_eq!("NoFinetune".parse::<Mode>().unwrap(), Mode::NoFinetune);
        assert!("bert".parse::<Mode>().is_err());
    }
}
