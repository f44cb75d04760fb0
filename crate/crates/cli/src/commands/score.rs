use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sleepnet::compute::Checkpoint;
use sleepnet::edf::{parse_edf, RawStage, StageAnnotation, STAGE_EPOCH_S};
use sleepnet::eval::{overall_metrics, ConfusionMatrix};
use sleepnet::network::{Model, ModelConfig};
use sleepnet::pipeline::{normalize_epoch, prepare_recording, segment_epochs, LabeledEpoch, PrepareOptions, StageClass};
use sleepnet::scoring::{score_recording, ScoredRecording};

use super::data::{load_plan, load_recordings, model_from_checkpoint, read_fold_checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{write_file, RunLayout, MODEL_CONFIG_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub epochs: usize,
    pub agreement_percent: f64,
    pub kappa: Option<f64>,
}

/// Percentage of epochs on which two stage sequences agree, with kappa.
pub fn agreement(a: &[StageClass], b: &[StageClass]) -> Result<Agreement> {
    let cm = ConfusionMatrix::from_labels(a, b)?;
    let m = overall_metrics(&cm)?;
    Ok(Agreement { epochs: a.len(), agreement_percent: m.accuracy, kappa: m.kappa })
}

pub struct ScoreOptions {
    pub psg: PathBuf,
    pub hypnogram: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Architecture of the checkpoint; found next to it when `None`.
    pub model: Option<ModelConfig>,
}

pub struct ScoreOutcome {
    pub scored: ScoredRecording,
    pub agreement: Option<Agreement>,
}

/// The `model.toml` that `train` writes above the fold checkpoint folders.
pub fn find_model_config(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.ancestors().skip(1).take(2).map(|d| d.join(MODEL_CONFIG_FILE)).find(|p| p.exists())
}

fn load_model(options: &ScoreOptions) -> Result<Model> {
    let config = match &options.model {
        Some(m) => m.clone(),
        None => {
            let path = find_model_config(&options.checkpoint).ok_or_else(|| {
                CliError::Usage(format!(
                    "no {MODEL_CONFIG_FILE} next to {}; pass --config with the run's configuration",
                    options.checkpoint.display()
                ))
            })?;
            let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid model config {}: {e}", path.display())))?
        }
    };
    let ckpt = Checkpoint::read(&options.checkpoint).map_err(CliError::checkpoint(&options.checkpoint))?;
    model_from_checkpoint(config, &ckpt, &options.checkpoint)
}

/// Every complete 30-s window of `channel`, normalized. Labels are
/// placeholders.
fn unlabeled_epochs(psg: &[u8], channel: &str) -> Result<Vec<LabeledEpoch>> {
    let rec = parse_edf(psg)?;
    let ch = rec.select_channel(channel)?;
    let n = (ch.samples.len() as f64 / ch.sampling_rate / STAGE_EPOCH_S).floor() as usize;
    let whole = StageAnnotation { onset_s: 0.0, duration_s: n as f64 * STAGE_EPOCH_S, label: RawStage::W };
    let epochs = segment_epochs(&ch.samples, ch.sampling_rate, &[whole], "")?;
    Ok(epochs.into_iter().map(normalize_epoch).collect())
}

pub fn run(config: &RunConfig, options: &ScoreOptions) -> Result<ScoreOutcome> {
    let model = load_model(options)?;
    let psg = fs::read(&options.psg).map_err(CliError::io(&options.psg))?;
    let (epochs, labeled) = match &options.hypnogram {
        Some(h) => {
            let hyp = fs::read(h).map_err(CliError::io(h))?;
            let opts = PrepareOptions { trim_wake_minutes: None, ..config.prepare_options() };
            let (rec, _) = prepare_recording(&psg, &hyp, "", "", &opts)?;
            (rec.epochs, true)
        }
        None => (unlabeled_epochs(&psg, &config.data.channel)?, false),
    };
    if let Some(e) = epochs.first().filter(|e| e.samples.len() != model.config().epoch_samples) {
        return Err(CliError::Data(format!(
            "{} has {} samples per epoch but the model expects {}",
            options.psg.display(),
            e.samples.len(),
            model.config().epoch_samples
        )));
    }
    let scored = score_recording(&model, &epochs, config.execution())?;
    let agreement = if labeled && !scored.epochs.is_empty() {
        let pred: Vec<StageClass> = scored.epochs.iter().map(|e| e.predicted).collect();
        let truth: Vec<StageClass> = scored.epochs.iter().map(|e| e.truth).collect();
        Some(agreement(&pred, &truth)?)
    } else {
        None
    };

    let out = &config.output_dir;
    write_scored(out, &scored, labeled, None)?;
    if let Some(a) = &agreement {
        write_file(&out.join("agreement.json"), serde_json::to_string_pretty(a).expect("agreement serializes") + "\n")?;
    }
    write_file(&out.join("config.toml"), config.to_toml())?;
    Ok(ScoreOutcome { scored, agreement })
}

pub struct ExportOptions {
    pub recording: String,
    /// Defaults to the fold that holds the recording's subject out.
    pub fold: Option<usize>,
    /// Window indices to write; all when empty.
    pub windows: Vec<usize>,
}

pub fn export_attention(config: &RunConfig, options: &ExportOptions) -> Result<(PathBuf, ScoredRecording)> {
    let layout = RunLayout::new(&config.output_dir);
    let plan = load_plan(&layout)?;
    let rec = load_recordings(&layout)?.into_iter().find(|r| r.recording_id == options.recording).ok_or_else(|| {
        CliError::Usage(format!("recording {:?} is not among the prepared recordings of {}", options.recording, layout.root.display()))
    })?;
    let fold = match options.fold {
        Some(f) => f,
        None => plan
            .fold_of(&rec.subject_id)
            .ok_or_else(|| CliError::Data(format!("subject {} is missing from the fold plan", rec.subject_id)))?,
    };
    let path = layout.final_checkpoint(fold);
    let ckpt = read_fold_checkpoint(&path, fold, plan.k)?;
    let model = model_from_checkpoint(config.model.clone(), &ckpt, &path)?;
    let scored = score_recording(&model, &rec.epochs, config.execution())?;
    if let Some(w) = options.windows.iter().find(|&&w| w >= scored.windows.len()) {
        return Err(CliError::Usage(format!("window {w} does not exist; the recording has {} window(s)", scored.windows.len())));
    }
    let dir = layout.attention_dir(&rec.recording_id);
    let only = (!options.windows.is_empty()).then_some(options.windows.as_slice());
    write_scored(&dir, &scored, true, only)?;
    write_file(&layout.config(), config.to_toml())?;
    Ok((dir, scored))
}

/// `hypnogram.tsv`, `attention/windows.tsv` and one
/// `attention/window-NNNN.tsv` per decoded window (rows are outputs, columns
/// input epochs, both labelled by 30-s index).
fn write_scored(dir: &Path, scored: &ScoredRecording, labeled: bool, only: Option<&[usize]>) -> Result<()> {
    let mut hyp = String::from("epoch\tonset_s\tpredicted");
    if labeled {
        hyp.push_str("\texpert");
    }
    hyp.push('\n');
    for e in &scored.epochs {
        let _ = write!(hyp, "{}\t{}\t{}", e.position, e.position as f64 * STAGE_EPOCH_S, e.predicted);
        if labeled {
            let _ = write!(hyp, "\t{}", e.truth);
        }
        hyp.push('\n');
    }
    write_file(&dir.join("hypnogram.tsv"), hyp)?;

    let att = dir.join("attention");
    let mut index = String::from("window\tfirst_epoch\tskip\tfile\n");
    let mut offset = 0;
    for (w, win) in scored.windows.iter().enumerate() {
        let n = win.alpha.len();
        let positions: Vec<usize> = scored.epochs[offset..offset + n - win.skip].iter().map(|e| e.position).collect();
        // The skipped leading outputs of an end-aligned window repeat epochs scored by the previous window.
        let mut all = Vec::with_capacity(n);
        if win.skip > 0 {
            all.extend(scored.epochs[offset - win.skip..offset].iter().map(|e| e.position));
        }
        all.extend(positions);
        offset += n - win.skip;
        if only.is_some_and(|o| !o.contains(&w)) {
            continue;
        }
        let name = format!("window-{w:04}.tsv");
        let _ = writeln!(index, "{w}\t{}\t{}\t{name}", win.first_position, win.skip);
        let mut s = String::from("output");
        for p in &all {
            let _ = write!(s, "\t{p}");
        }
        s.push('\n');
        for (j, row) in win.alpha.iter().enumerate() {
            let _ = write!(s, "{}", all[j]);
            for a in row {
                let _ = write!(s, "\t{a}");
            }
            s.push('\n');
        }
        write_file(&att.join(name), s)?;
    }
    write_file(&att.join("windows.tsv"), index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use StageClass::*;

    #[test]
    fn self_agreement_is_total() {
        let h = [W, N1, N2, N2, N3, Rem, W];
        let a = agreement(&h, &h).unwrap();
        assert_eq!(a.agreement_percent, 100.0);
        assert_eq!(a.kappa, Some(1.0));
        assert_eq!(a.epochs, 7);
    }

    #[test]
    fn partial_agreement() {
        let a = agreement(&[W, W, N2, N2], &[W, N2, N2, N2]).unwrap();
        assert_eq!(a.agreement_percent, 75.0);
    }
}
