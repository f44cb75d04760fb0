//! Loading what `prepare` and `train` left in a run directory.

use std::path::Path;

use sleepnet::compute::{Checkpoint, Tensor};
use sleepnet::network::{Model, ModelConfig};
use sleepnet::pipeline::{FoldPlan, PreparedRecording};

use crate::error::{CliError, Result};
use crate::layout::{read_text, RunLayout};

pub const FOLD_KEY: &str = "run.fold";
pub const K_KEY: &str = "run.k";

/// Prepared recordings in index order.
pub fn load_recordings(layout: &RunLayout) -> Result<Vec<PreparedRecording>> {
    let index_path = layout.recordings_index();
    if !index_path.exists() {
        return Err(CliError::Data(format!(
            "{} has no prepared data ({} missing); run `sleepnet prepare` first",
            layout.root.display(),
            index_path.display()
        )));
    }
    let index = read_text(&index_path)?;
    let mut out = Vec::new();
    for (i, line) in index.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [recording, subject, file] = fields[..] else {
            return Err(CliError::Data(format!("{} line {}: expected 3 fields", index_path.display(), i + 1)));
        };
        let path = layout.data_dir().join(file);
        let rec = PreparedRecording::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if rec.recording_id != recording || rec.subject_id != subject {
            return Err(CliError::Data(format!(
                "{}: holds {}/{} but the index says {recording}/{subject}",
                path.display(),
                rec.subject_id,
                rec.recording_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_plan(layout: &RunLayout) -> Result<FoldPlan> {
    let path = layout.folds();
    if !path.exists() {
        return Err(CliError::Data(format!("{} missing; run `sleepnet prepare` first", path.display())));
    }
    FoldPlan::from_tsv(&read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn check_epoch_length(recordings: &[PreparedRecording], model: &ModelConfig) -> Result<()> {
    match recordings.iter().find(|r| r.samples_per_epoch != model.epoch_samples) {
        Some(r) => Err(CliError::Data(format!(
            "recording {} has {} samples per epoch but model.epoch_samples is {}",
            r.recording_id, r.samples_per_epoch, model.epoch_samples
        ))),
        None => Ok(()),
    }
}

/// Folds named on the command line, or all of them.
pub fn selected_folds(requested: &[usize], plan: &FoldPlan) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..plan.k).collect());
    }
    let mut folds = requested.to_vec();
    folds.sort_unstable();
    folds.dedup();
    if let Some(f) = folds.iter().find(|&&f| f >= plan.k) {
        return Err(CliError::Usage(format!("fold {f} does not exist; the plan has {} folds (0..{})", plan.k, plan.k - 1)));
    }
    Ok(folds)
}

pub fn tag_checkpoint(ckpt: &mut Checkpoint, fold: usize, k: usize) {
    ckpt.push(FOLD_KEY, Tensor::scalar(fold as f64));
    ckpt.push(K_KEY, Tensor::scalar(k as f64));
}

/// Reads a fold checkpoint and makes sure it belongs to `fold` of a `k`-fold plan.
pub fn read_fold_checkpoint(path: &Path, fold: usize, k: usize) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Data(format!("fold {fold} has no checkpoint at {}; run `sleepnet train` for it", path.display())));
    }
    let ckpt = Checkpoint::read(path).map_err(CliError::checkpoint(path))?;
    let scalar = |key: &str| ckpt.get(key).and_then(|t| t.data().first().copied()).map(|v| v as usize);
    match (scalar(FOLD_KEY), scalar(K_KEY)) {
        (Some(f), Some(kk)) if f == fold && kk == k => Ok(ckpt),
        (f, kk) => Err(CliError::Data(format!(
            "fold/checkpoint mismatch: {} was written for fold {} of {}, expected fold {fold} of {k}",
            path.display(),
            f.map_or("?".into(), |v| v.to_string()),
            kk.map_or("?".into(), |v| v.to_string()),
        ))),
    }
}

pub fn model_from_checkpoint(config: ModelConfig, ckpt: &Checkpoint, path: &Path) -> Result<Model> {
    let mut model = Model::new(config, 0)?;
    model.load_checkpoint(ckpt).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(model)
}
