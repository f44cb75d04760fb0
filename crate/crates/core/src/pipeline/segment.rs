use crate::edf::{StageAnnotation, STAGE_EPOCH_S};

use super::{EpochOrigin, LabeledEpoch, PipelineError, StageClass};

pub const NORMALIZE_EPS: f64 = 1e-8;

pub(crate) fn samples_per_epoch(rate: f64) -> Result<usize, PipelineError> {
    let n = rate * STAGE_EPOCH_S;
    if !(n.is_finite() && n >= 1.0 && (n - n.round()).abs() < 1e-9) {
        return Err(PipelineError::FractionalEpoch { rate });
    }
    Ok(n.round() as usize)
}

/// Drops 30-s stage windows that extend past the end of a signal of
/// `signal_len` samples. Returns the clipped annotations and the number of
/// windows dropped.
pub fn truncate_to_signal(
    annotations: &[StageAnnotation],
    signal_len: usize,
    rate: f64,
) -> Result<(Vec<StageAnnotation>, usize), PipelineError> {
    let spe = samples_per_epoch(rate)?;
    let signal_s = (signal_len / spe) as f64 * STAGE_EPOCH_S;
    let mut out = Vec::with_capacity(annotations.len());
    let mut dropped = 0;
    for a in annotations {
        let fit = ((signal_s - a.onset_s) / STAGE_EPOCH_S).floor().max(0.0) as usize;
        let keep = a.n_epochs().min(fit);
        dropped += a.n_epochs() - keep;
        if keep > 0 {
            out.push(StageAnnotation { onset_s: a.onset_s, duration_s: keep as f64 * STAGE_EPOCH_S, label: a.label });
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} annotated epoch(s) beyond the end of the signal");
    }
    Ok((out, dropped))
}

/// Cuts `signal` into one raw (unnormalized) epoch per annotated 30-s window.
/// Movement-time and unscored windows are skipped; stage 4 becomes N3.
pub fn segment_epochs(
    signal: &[f64],
    rate: f64,
    annotations: &[StageAnnotation],
    subject_id: &str,
) -> Result<Vec<LabeledEpoch>, PipelineError> {
    let spe = samples_per_epoch(rate)?;
    let signal_s = signal.len() as f64 / rate;
    let mut epochs = Vec::new();
    for a in annotations {
        let Some(label) = StageClass::from_raw(a.label) else { continue };
        for k in 0..a.n_epochs() {
            let start_s = a.onset_s + k as f64 * STAGE_EPOCH_S;
            let start_f = start_s * rate;
            if (start_f - start_f.round()).abs() > 1e-6 {
                return Err(PipelineError::MisalignedOnset { onset_s: start_s });
            }
            let start = start_f.round() as usize;
            let end = start + spe;
            if end > signal.len() {
                return Err(PipelineError::WindowExceedsSignal { start_s, end_s: start_s + STAGE_EPOCH_S, signal_s });
            }
            epochs.push(LabeledEpoch {
                samples: signal[start..end].iter().map(|&v| v as f32).collect(),
                label,
                subject_id: subject_id.to_owned(),
                position: (start_s / STAGE_EPOCH_S).round() as usize,
                origin: EpochOrigin::Recorded,
            });
        }
    }
    Ok(epochs)
}

/// `(x - mean) / max(std, eps)` with the population standard deviation.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = var.sqrt().max(NORMALIZE_EPS);
    x.iter().map(|v| (v - mean) / scale).collect()
}

pub fn normalize_epoch(mut epoch: LabeledEpoch) -> LabeledEpoch {
    let x: Vec<f64> = epoch.samples.iter().map(|&v| f64::from(v)).collect();
    epoch.samples = normalize(&x).into_iter().map(|v| v as f32).collect();
    epoch
}

/// Keeps only epochs within `margin_minutes` of the first and last non-wake
/// epoch. Recordings without sleep are returned unchanged.
pub fn trim_wake(epochs: Vec<LabeledEpoch>, margin_minutes: usize) -> Vec<LabeledEpoch> {
    let sleep: Vec<usize> = epochs.iter().filter(|e| e.label != StageClass::W).map(|e| e.position).collect();
    let (Some(&first), Some(&last)) = (sleep.iter().min(), sleep.iter().max()) else {
        return epochs;
    };
    let margin = margin_minutes * 2;
    let lo = first.saturating_sub(margin);
    let hi = last + margin;
    epochs.into_iter().filter(|e| (lo..=hi).contains(&e.position)).collect()
}
