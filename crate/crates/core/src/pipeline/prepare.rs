//! One PSG + hypnogram pair to a [`PreparedRecording`].

use serde::Serialize;

use crate::edf::{parse_edf, parse_hypnogram, RawStage};

use super::segment::samples_per_epoch;
use super::{normalize_epoch, segment_epochs, trim_wake, truncate_to_signal, PipelineError, PreparedRecording};

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    /// EEG derivation to extract, e.g. `"EEG Fpz-Cz"`.
    pub channel: String,
    /// Keep only this many minutes of wake around the sleep period.
    pub trim_wake_minutes: Option<usize>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self { channel: "EEG Fpz-Cz".into(), trim_wake_minutes: None }
    }
}

/// What happened to the annotated windows of one recording.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepareSummary {
    pub channel: String,
    pub annotated_epochs: usize,
    /// Windows past the end of the signal.
    pub dropped_beyond_signal: usize,
    /// Movement-time and unscored windows.
    pub excluded_unscored: usize,
    /// Wake windows removed by trimming.
    pub trimmed_wake: usize,
    /// Non-stage annotations such as "Lights off".
    pub ignored_annotations: usize,
    pub kept: usize,
}

pub fn prepare_recording(
    psg: &[u8],
    hypnogram: &[u8],
    subject_id: &str,
    recording_id: &str,
    options: &PrepareOptions,
) -> Result<(PreparedRecording, PrepareSummary), PipelineError> {
    let rec = parse_edf(psg)?;
    let channel = rec.select_channel(&options.channel)?;
    let hyp = parse_hypnogram(hypnogram)?;
    let spe = samples_per_epoch(channel.sampling_rate)?;

    let annotated_epochs = hyp.stages.iter().map(|a| a.n_epochs()).sum();
    let (stages, dropped) = truncate_to_signal(&hyp.stages, channel.samples.len(), channel.sampling_rate)?;
    let excluded_unscored = stages
        .iter()
        .filter(|a| matches!(a.label, RawStage::M | RawStage::Unknown))
        .map(|a| a.n_epochs())
        .sum();
    let mut epochs = segment_epochs(&channel.samples, channel.sampling_rate, &stages, subject_id)?;
    let segmented = epochs.len();
    if let Some(margin) = options.trim_wake_minutes {
        epochs = trim_wake(epochs, margin);
    }
    let trimmed_wake = segmented - epochs.len();
    let epochs: Vec<_> = epochs.into_iter().map(normalize_epoch).collect();
    let summary = PrepareSummary {
        channel: channel.label.clone(),
        annotated_epochs,
        dropped_beyond_signal: dropped,
        excluded_unscored,
        trimmed_wake,
        ignored_annotations: hyp.ignored,
        kept: epochs.len(),
    };
    let prepared = PreparedRecording::new(subject_id, recording_id, channel.sampling_rate, spe, epochs)?;
    Ok((prepared, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::StageClass;
    use crate::synth::synthetic_night;

    #[test]
    fn synthetic_night_prepares() {
        let night = synthetic_night(30, 100.0, 3, 11).unwrap();
        let (prep, summary) =
            prepare_recording(&night.psg.to_bytes(), &night.hypnogram.to_bytes(), "SC400", "SC4001", &PrepareOptions::default())
                .unwrap();
        assert_eq!(summary.annotated_epochs, 33);
        assert_eq!(summary.dropped_beyond_signal, 3);
        assert_eq!(summary.ignored_annotations, 1);
        let scored = night.stages[..30].iter().filter(|s| StageClass::from_raw(**s).is_some()).count();
        assert_eq!(prep.epochs.len(), scored);
        assert_eq!(summary.excluded_unscored, 30 - scored);
        assert_eq!(prep.samples_per_epoch, 3000);
        for e in &prep.epochs {
            let mean: f64 = e.samples.iter().map(|&v| f64::from(v)).sum::<f64>() / 3000.0;
            assert!(mean.abs() < 1e-5);
            assert_eq!(Some(e.label), StageClass::from_raw(night.stages[e.position]));
        }
    }

    #[test]
    fn missing_channel_is_reported() {
        let night = synthetic_night(4, 100.0, 0, 1).unwrap();
        let opts = PrepareOptions { channel: "EEG C4-A1".into(), trim_wake_minutes: None };
        let err = prepare_recording(&night.psg.to_bytes(), &night.hypnogram.to_bytes(), "s", "r", &opts).unwrap_err();
        assert!(matches!(err, PipelineError::Edf(crate::edf::EdfError::ChannelNotFound { .. })));
    }
}
