//! Whole-recording inference: covering windows of `maxtime` epochs, greedy
//! decoding, one prediction per epoch plus the attention matrices.

use serde::Serialize;
use thiserror::Error;

use crate::network::{Model, NetworkError};
use crate::par::{self, Execution};
use crate::pipeline::{covering_sequences, CoveringWindow, EpochSequence, LabeledEpoch, PipelineError, StageClass};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEpoch {
    pub position: usize,
    pub predicted: StageClass,
    pub truth: StageClass,
    /// Softmax over the five stages and EOD.
    pub probabilities: Vec<f64>,
}

/// Attention of one decoded window: `alpha[j][i]` is the weight on input
/// epoch `i` when emitting output `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowAttention {
    /// 30-s index of the window's first epoch.
    pub first_position: usize,
    /// Leading outputs already scored by the previous window.
    pub skip: usize,
    pub alpha: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRecording {
    pub epochs: Vec<ScoredEpoch>,
    pub windows: Vec<WindowAttention>,
    pub premature_eod: usize,
}

impl ScoredRecording {
    pub fn predicted(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.predicted.index()).collect()
    }

    pub fn truth(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.truth.index()).collect()
    }
}

/// Scores every epoch exactly once. A recording shorter than `maxtime` is
/// decoded as a single shorter window.
pub fn score_recording(model: &Model, epochs: &[LabeledEpoch], exec: Execution) -> Result<ScoredRecording, ScoreError> {
    let maxtime = model.config().maxtime;
    let windows = if epochs.is_empty() {
        Vec::new()
    } else if epochs.len() < maxtime {
        vec![CoveringWindow { sequence: EpochSequence::new(epochs.to_vec())?, skip: 0 }]
    } else {
        covering_sequences(epochs, maxtime)?
    };
    let decoded = par::map_slice(exec, &windows, |w| {
        let refs: Vec<&[f32]> = w.sequence.inputs.iter().map(|e| e.samples.as_slice()).collect();
        model.predict(&refs)
    });
    let mut out = ScoredRecording { epochs: Vec::with_capacity(epochs.len()), windows: Vec::new(), premature_eod: 0 };
    for (w, d) in windows.iter().zip(decoded) {
        let d = d?;
        out.premature_eod += d.premature_eod;
        for (j, input) in w.sequence.inputs.iter().enumerate().skip(w.skip) {
            out.epochs.push(ScoredEpoch {
                position: input.position,
                predicted: d.labels[j],
                truth: input.label,
                probabilities: d.probabilities[j].clone(),
            });
        }
        out.windows.push(WindowAttention {
            first_position: w.sequence.inputs[0].position,
            skip: w.skip,
            alpha: d.attention.into_iter().map(|a| a.alpha).collect(),
        });
    }
    Ok(out)
}
