//! Fixed run-directory layout.
//!
//! ```text
//! <run>/config.toml                    effective configuration
//! <run>/data/<recording>.slp           prepared epochs, one file per recording
//! <run>/data/recordings.tsv            recording, subject, file
//! <run>/data/summary.tsv               per-recording class counts
//! <run>/folds.tsv                      subject to fold
//! <run>/logs/fold-NN.train.jsonl       deterministic training log
//! <run>/logs/fold-NN.timing.jsonl      wall-clock times of the logged steps
//! <run>/checkpoints/model.toml         architecture of every checkpoint below
//! <run>/checkpoints/fold-NN/epoch-NNNN.ckpt, latest.ckpt, final.ckpt
//! <run>/reports/metrics.json, metrics.txt, confusion.tsv, predictions.tsv
//! <run>/attention/<recording>/         export-attention output
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn recording_file(&self, recording_id: &str) -> PathBuf {
        self.data_dir().join(format!("{recording_id}.slp"))
    }

    pub fn recordings_index(&self) -> PathBuf {
        self.data_dir().join("recordings.tsv")
    }

    pub fn summary(&self) -> PathBuf {
        self.data_dir().join("summary.tsv")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.tsv")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn train_log(&self, fold: usize) -> PathBuf {
        self.logs_dir().join(format!("fold-{fold:02}.train.jsonl"))
    }

    pub fn timing_log(&self, fold: usize) -> PathBuf {
        self.logs_dir().join(format!("fold-{fold:02}.timing.jsonl"))
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn model_config(&self) -> PathBuf {
        self.checkpoints_dir().join(MODEL_CONFIG_FILE)
    }

    pub fn fold_checkpoints(&self, fold: usize) -> PathBuf {
        self.checkpoints_dir().join(format!("fold-{fold:02}"))
    }

    pub fn epoch_checkpoint(&self, fold: usize, epoch: u64) -> PathBuf {
        self.fold_checkpoints(fold).join(format!("epoch-{epoch:04}.ckpt"))
    }

    pub fn latest_checkpoint(&self, fold: usize) -> PathBuf {
        self.fold_checkpoints(fold).join("latest.ckpt")
    }

    pub fn final_checkpoint(&self, fold: usize) -> PathBuf {
        self.fold_checkpoints(fold).join("final.ckpt")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn attention_dir(&self, recording_id: &str) -> PathBuf {
        self.root.join("attention").join(recording_id)
    }
}

pub const MODEL_CONFIG_FILE: &str = "model.toml";

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}
