//! Run configuration, read from and written back to TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sleepnet::compute::RmsPropConfig;
use sleepnet::loss::LossKind;
use sleepnet::network::ModelConfig;
use sleepnet::par::Execution;
use sleepnet::pipeline::{PrepareOptions, SmoteConfig, StageClass};
use sleepnet::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "sleep-edf-13")]
    SleepEdf13,
    #[serde(rename = "sleep-edf-18")]
    SleepEdf18,
}

impl Variant {
    pub fn default_k(self) -> usize {
        match self {
            Self::SleepEdf13 => 20,
            Self::SleepEdf18 => 10,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SleepEdf13 => "sleep-edf-13",
            Self::SleepEdf18 => "sleep-edf-18",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sleep-edf-13" => Ok(Self::SleepEdf13),
            "sleep-edf-18" => Ok(Self::SleepEdf18),
            other => Err(format!("unknown dataset variant {other:?} (expected sleep-edf-13 or sleep-edf-18)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `*-PSG.edf` / `*-Hypnogram.edf` pairs.
    pub raw_dir: PathBuf,
    /// Tab-separated `psg  hypnogram  subject  [recording]` lines that replace
    /// filename pairing. Relative paths resolve against the manifest's folder.
    pub manifest: Option<PathBuf>,
    pub channel: String,
    pub variant: Variant,
    pub trim_wake_minutes: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            raw_dir: PathBuf::from("data/raw"),
            manifest: None,
            channel: "EEG Fpz-Cz".into(),
            variant: Variant::default(),
            trim_wake_minutes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub loss: LossKind,
    pub l2_beta: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub batch_size: usize,
    /// Passes over the training sequences.
    pub max_epochs: u64,
    /// Optional cap on optimizer steps per fold.
    pub max_steps: Option<u64>,
    pub eod_as_class: bool,
    pub log_every_steps: u64,
    pub checkpoint_every_epochs: u64,
    /// Held-out metrics in the train log every this many epochs; 0 turns them off.
    pub validate_every_epochs: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: t.loss,
            l2_beta: t.l2_beta,
            learning_rate: t.optimizer.learning_rate,
            rmsprop_decay: t.optimizer.decay,
            rmsprop_epsilon: t.optimizer.epsilon,
            batch_size: t.batch_size,
            max_epochs: 400,
            max_steps: None,
            eod_as_class: t.eod_as_class,
            log_every_steps: 50,
            checkpoint_every_epochs: 10,
            validate_every_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteSettings {
    pub enabled: bool,
    pub k_neighbors: usize,
    /// Per-class targets; unset balances every class to the majority count.
    pub targets: Option<BTreeMap<StageClass, usize>>,
}

impl Default for SmoteSettings {
    fn default() -> Self {
        let s = SmoteConfig::default();
        Self { enabled: true, k_neighbors: s.k_neighbors, targets: s.targets }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory; every command writes only below it.
    pub output_dir: PathBuf,
    /// Worker threads; 1 runs everything on the calling thread.
    pub threads: Option<usize>,
    /// Cross-validation folds; unset uses the variant's default.
    pub k: Option<usize>,
    pub data: DataConfig,
    pub train: TrainSettings,
    pub smote: SmoteSettings,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            threads: None,
            k: None,
            data: DataConfig::default(),
            train: TrainSettings::default(),
            smote: SmoteSettings::default(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or_else(|| self.data.variant.default_k())
    }

    pub fn execution(&self) -> Execution {
        if self.threads == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions { channel: self.data.channel.clone(), trim_wake_minutes: self.data.trim_wake_minutes }
    }

    /// Trainer settings for cross-validation round `fold`.
    pub fn train_config(&self, fold: usize) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optimizer: RmsPropConfig { learning_rate: t.learning_rate, decay: t.rmsprop_decay, epsilon: t.rmsprop_epsilon },
            l2_beta: t.l2_beta,
            batch_size: t.batch_size,
            loss: t.loss,
            eod_as_class: t.eod_as_class,
            seed: fold_seed(self.seed, fold, 0),
            execution: self.execution(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be positive, got {}", self.train.learning_rate));
        }
        if !(self.train.l2_beta >= 0.0 && self.train.l2_beta.is_finite()) {
            return bad(format!("train.l2_beta must be non-negative, got {}", self.train.l2_beta));
        }
        if self.train.log_every_steps == 0 {
            return bad("train.log_every_steps must be positive".into());
        }
        if self.smote.k_neighbors == 0 {
            return bad("smote.k_neighbors must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.k == Some(0) {
            return bad("k must be positive".into());
        }
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Independent seeds per fold and purpose.
pub fn fold_seed(seed: u64, fold: usize, purpose: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD6E8_FEB8_6659_FD93)
}
