use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sleepnet::compute::{Checkpoint, Tensor};
use sleepnet::eval::{aggregate_folds, FoldResult};
use sleepnet::network::Model;
use sleepnet::pipeline::{
    balanced_targets, class_counts, make_sequences, smote_oversample, synthetic_sequences, EpochSequence, FoldPlan,
    LabeledEpoch, PreparedRecording, StageClass,
};
use sleepnet::scoring::score_recording;
use sleepnet::training::{StepReport, TrainError, Trainer};

use super::data::{check_epoch_length, load_plan, load_recordings, selected_folds, tag_checkpoint};
use crate::config::{fold_seed, RunConfig};
use crate::error::{CliError, Result};
use crate::layout::{create_dir, write_file, RunLayout};

/// One line of `fold-NN.train.jsonl`. Epochs count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Step { step: u64, epoch: u64, loss: f64, data_loss: f64, l2: f64, accuracy: f64 },
    Epoch { epoch: u64, step: u64, train_loss: f64, train_accuracy: f64 },
    Validation { epoch: u64, step: u64, epochs: usize, accuracy: f64, macro_f1: Option<f64>, kappa: Option<f64> },
    Abort { step: u64, message: String },
}

#[derive(Debug, Clone, Serialize)]
struct TimingEntry {
    step: u64,
    wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub steps: u64,
    pub epochs: u64,
    pub sequences: usize,
    pub synthetic_epochs: usize,
    pub last_loss: Option<f64>,
}

/// Running totals of the pass in progress, kept in checkpoints so a resumed
/// run logs the same epoch line as an uninterrupted one.
#[derive(Debug, Clone, Copy, Default)]
struct PassTotals {
    loss: f64,
    steps: u64,
    correct: u64,
    total: u64,
}

const PASS_KEYS: [&str; 4] = ["run.pass.loss", "run.pass.steps", "run.pass.correct", "run.pass.total"];

impl PassTotals {
    fn add(&mut self, r: &StepReport) {
        self.loss += r.loss;
        self.steps += 1;
        self.correct += r.correct as u64;
        self.total += r.total as u64;
    }

    fn push_into(&self, ckpt: &mut Checkpoint) {
        let values = [self.loss, self.steps as f64, self.correct as f64, self.total as f64];
        for (k, v) in PASS_KEYS.iter().zip(values) {
            ckpt.push(*k, Tensor::scalar(v));
        }
    }

    fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        let v = |k: &str| ckpt.get(k).map_or(0.0, |t| t.data()[0]);
        Self { loss: v(PASS_KEYS[0]), steps: v(PASS_KEYS[1]) as u64, correct: v(PASS_KEYS[2]) as u64, total: v(PASS_KEYS[3]) as u64 }
    }
}

pub struct TrainOptions {
    pub folds: Vec<usize>,
    pub resume: bool,
}

pub fn run(config: &RunConfig, options: &TrainOptions) -> Result<Vec<FoldOutcome>> {
    let layout = RunLayout::new(&config.output_dir);
    let recordings = load_recordings(&layout)?;
    let plan = load_plan(&layout)?;
    check_epoch_length(&recordings, &config.model)?;
    let folds = selected_folds(&options.folds, &plan)?;

    create_dir(&layout.checkpoints_dir())?;
    create_dir(&layout.logs_dir())?;
    let model_toml = toml::to_string(&config.model).expect("model config serializes to TOML");
    write_file(&layout.model_config(), model_toml)?;
    write_file(&layout.config(), config.to_toml())?;

    folds.into_iter().map(|fold| train_fold(config, &layout, &recordings, &plan, fold, options.resume)).collect()
}

/// Training sequences of one round: the train subjects' recordings cut into
/// `maxtime` windows, plus SMOTE epochs grouped by class.
pub fn fold_sequences(
    config: &RunConfig,
    recordings: &[PreparedRecording],
    plan: &FoldPlan,
    fold: usize,
) -> Result<(Vec<EpochSequence>, usize)> {
    let maxtime = config.model.maxtime;
    let train: Vec<&PreparedRecording> = recordings.iter().filter(|r| plan.is_train(&r.subject_id, fold)).collect();
    let mut sequences = Vec::new();
    for r in &train {
        sequences.extend(make_sequences(r.epochs.clone(), maxtime)?);
    }
    let mut n_synthetic = 0;
    if config.smote.enabled {
        let pool: Vec<LabeledEpoch> = train.iter().flat_map(|r| r.epochs.iter().cloned()).collect();
        let targets = config.smote.targets.clone().unwrap_or_else(|| balanced_targets(&pool));
        let out = smote_oversample(&pool, &targets, config.smote.k_neighbors, fold_seed(config.seed, fold, 1), config.execution())?;
        n_synthetic = out.n_synthetic;
        let counts = class_counts(&out.epochs);
        log::info!(
            "fold {fold}: SMOTE added {n_synthetic} epochs; class counts {}",
            StageClass::ALL.iter().map(|c| format!("{c} {}", counts[c.index()])).collect::<Vec<_>>().join(", ")
        );
        sequences.extend(synthetic_sequences(out.synthetic().to_vec(), maxtime)?);
    }
    if sequences.is_empty() {
        return Err(CliError::Data(format!(
            "fold {fold} has no training sequence of {maxtime} epochs; the train split holds {} recording(s)",
            train.len()
        )));
    }
    Ok((sequences, n_synthetic))
}

struct Logs {
    train: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Logs {
    fn open(layout: &RunLayout, fold: usize, resume_at: Option<(u64, u64)>) -> Result<Self> {
        let train_path = layout.train_log(fold);
        let timing_path = layout.timing_log(fold);
        match resume_at {
            Some((step, epoch)) => {
                truncate_log(&train_path, |e: &LogEntry| match *e {
                    LogEntry::Step { step: s, .. } => s <= step,
                    LogEntry::Epoch { epoch: p, .. } | LogEntry::Validation { epoch: p, .. } => p <= epoch,
                    LogEntry::Abort { .. } => false,
                })?;
                truncate_log(&timing_path, |e: &serde_json::Value| e["step"].as_u64().is_some_and(|s| s <= step))?;
            }
            None => {
                write_file(&train_path, "")?;
                write_file(&timing_path, "")?;
            }
        }
        let open = |p: &Path| OpenOptions::new().append(true).create(true).open(p).map(BufWriter::new).map_err(CliError::io(p));
        Ok(Self { train: open(&train_path)?, timing: open(&timing_path)? })
    }

    fn entry(&mut self, e: &LogEntry) -> Result<()> {
        writeln!(self.train, "{}", serde_json::to_string(e).expect("log entry serializes"))
            .and_then(|_| self.train.flush())
            .map_err(|e| CliError::Data(format!("writing train log: {e}")))
    }

    fn timing(&mut self, step: u64, started: Instant) -> Result<()> {
        let t = TimingEntry { step, wall_s: started.elapsed().as_secs_f64() };
        writeln!(self.timing, "{}", serde_json::to_string(&t).expect("timing entry serializes"))
            .and_then(|_| self.timing.flush())
            .map_err(|e| CliError::Data(format!("writing timing log: {e}")))
    }
}

/// Keeps the lines of an existing log that `keep` accepts.
fn truncate_log<T: for<'de> Deserialize<'de>>(path: &Path, keep: impl Fn(&T) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut kept = String::new();
    for line in text.lines() {
        let entry: T = serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if keep(&entry) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, kept)
}

fn train_fold(
    config: &RunConfig,
    layout: &RunLayout,
    recordings: &[PreparedRecording],
    plan: &FoldPlan,
    fold: usize,
    resume: bool,
) -> Result<FoldOutcome> {
    let started = Instant::now();
    let (sequences, synthetic_epochs) = fold_sequences(config, recordings, plan, fold)?;
    let test: Vec<&PreparedRecording> = recordings.iter().filter(|r| plan.is_test(&r.subject_id, fold)).collect();
    create_dir(&layout.fold_checkpoints(fold))?;

    let model = Model::new(config.model.clone(), fold_seed(config.seed, fold, 2))?;
    let mut trainer = Trainer::new(model, config.train_config(fold));
    let mut pass = PassTotals::default();
    let latest = layout.latest_checkpoint(fold);
    let resume_at = if resume && latest.exists() {
        let ckpt = super::data::read_fold_checkpoint(&latest, fold, plan.k)?;
        trainer.load_checkpoint(&ckpt)?;
        pass = PassTotals::from_checkpoint(&ckpt);
        log::info!("fold {fold}: resuming at step {} (epoch {})", trainer.step_count(), trainer.epoch_count());
        Some((trainer.step_count(), trainer.epoch_count()))
    } else {
        if resume {
            log::warn!("fold {fold}: nothing to resume from at {}; starting fresh", latest.display());
        }
        None
    };
    let mut logs = Logs::open(layout, fold, resume_at)?;
    log::info!("fold {fold}: {} training sequences ({synthetic_epochs} synthetic epochs)", sequences.len());

    let settings = &config.train;
    let max_steps = settings.max_steps.unwrap_or(u64::MAX);
    let mut last_loss = None;
    let save = |trainer: &Trainer, pass: &PassTotals, paths: &[&Path]| -> Result<()> {
        let mut ckpt = trainer.to_checkpoint();
        tag_checkpoint(&mut ckpt, fold, plan.k);
        pass.push_into(&mut ckpt);
        for p in paths {
            ckpt.write(p).map_err(CliError::checkpoint(p))?;
        }
        Ok(())
    };

    while trainer.epoch_count() < settings.max_epochs && trainer.step_count() < max_steps {
        let epoch = trainer.epoch_count() + 1;
        let mut log_err = None;
        let result = trainer.train_epoch(&sequences, |r| {
            pass.add(r);
            if r.step.is_multiple_of(settings.log_every_steps) {
                let e = LogEntry::Step { step: r.step, epoch, loss: r.loss, data_loss: r.data_loss, l2: r.l2, accuracy: r.accuracy() };
                if let Err(e) = logs.entry(&e).and_then(|_| logs.timing(r.step, started)) {
                    log_err = Some(e);
                    return false;
                }
            }
            r.step < max_steps
        });
        if let Some(e) = log_err {
            return Err(e);
        }
        let reports = match result {
            Ok(r) => r,
            Err(e @ TrainError::NonFinite { .. }) => {
                let message = format!("fold {fold}: {e}; lower train.learning_rate or check the prepared data");
                logs.entry(&LogEntry::Abort { step: trainer.step_count() + 1, message: message.clone() })?;
                log::error!("{message}");
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(r) = reports.last() {
            last_loss = Some(r.loss);
        }
        if trainer.epoch_count() < epoch {
            break;
        }
        let train_loss = pass.loss / pass.steps.max(1) as f64;
        let train_accuracy = if pass.total == 0 { 0.0 } else { pass.correct as f64 / pass.total as f64 };
        logs.entry(&LogEntry::Epoch { epoch, step: trainer.step_count(), train_loss, train_accuracy })?;
        pass = PassTotals::default();
        if epoch.is_multiple_of(settings.validate_every_epochs) && !test.is_empty() {
            logs.entry(&validate(&trainer.model, &test, config, epoch, trainer.step_count())?)?;
        }
        if epoch.is_multiple_of(settings.checkpoint_every_epochs) {
            save(&trainer, &pass, &[&layout.epoch_checkpoint(fold, epoch), &latest])?;
        }
    }
    save(&trainer, &pass, &[&layout.final_checkpoint(fold), &latest])?;
    log::info!("fold {fold}: stopped at step {} after {} epoch(s)", trainer.step_count(), trainer.epoch_count());
    Ok(FoldOutcome {
        fold,
        steps: trainer.step_count(),
        epochs: trainer.epoch_count(),
        sequences: sequences.len(),
        synthetic_epochs,
        last_loss,
    })
}

fn validate(model: &Model, test: &[&PreparedRecording], config: &RunConfig, epoch: u64, step: u64) -> Result<LogEntry> {
    let mut folds = Vec::with_capacity(test.len());
    for r in test {
        let scored = score_recording(model, &r.epochs, config.execution())?;
        let pred = scored.epochs.iter().map(|e| e.predicted).collect();
        let truth = scored.epochs.iter().map(|e| e.truth).collect();
        folds.push(FoldResult { subjects: vec![r.recording_id.clone()], pred, truth });
    }
    let report = aggregate_folds(&folds)?;
    Ok(LogEntry::Validation {
        epoch,
        step,
        epochs: report.confusion.total() as usize,
        accuracy: report.overall.accuracy,
        macro_f1: report.overall.macro_f1,
        kappa: report.overall.kappa,
    })
}
