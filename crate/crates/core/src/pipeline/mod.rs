//! From recordings to model-ready data: 30-s epoch segmentation, per-epoch
//! standardization, decoder framing, subject-wise folds and SMOTE.

mod dataset;
mod folds;
mod prepare;
mod segment;
mod sequence;
mod smote;

pub use dataset::{PreparedRecording, DATASET_MAGIC, DATASET_VERSION};
pub use folds::{split_epochs_intra, split_folds, FoldPlan};
pub use prepare::{prepare_recording, PrepareOptions, PrepareSummary};
pub use segment::{normalize, normalize_epoch, segment_epochs, trim_wake, truncate_to_signal, NORMALIZE_EPS};
pub use sequence::{covering_sequences, make_sequences, synthetic_sequences, CoveringWindow, EpochSequence};
pub use smote::{balanced_targets, interpolate, smote_oversample, SmoteConfig, SmoteOutput};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{EdfError, RawStage};

/// The five AASM stages scored by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageClass {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

pub const N_STAGES: usize = 5;

impl StageClass {
    pub const ALL: [StageClass; N_STAGES] = [Self::W, Self::N1, Self::N2, Self::N3, Self::Rem];

    /// R&K to AASM: stages 3 and 4 merge into N3; movement time and unscored
    /// epochs have no class.
    pub fn from_raw(raw: RawStage) -> Option<Self> {
        match raw {
            RawStage::W => Some(Self::W),
            RawStage::S1 => Some(Self::N1),
            RawStage::S2 => Some(Self::N2),
            RawStage::S3 | RawStage::S4 => Some(Self::N3),
            RawStage::R => Some(Self::Rem),
            RawStage::M | RawStage::Unknown => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::W => "W",
            Self::N1 => "N1",
            Self::N2 => "N2",
            Self::N3 => "N3",
            Self::Rem => "REM",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for StageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Decoder vocabulary: the five stages plus the end- and start-of-decoding
/// markers. Indices 0..5 are stages, 5 is EOD and 6 is SOD; the decoder emits
/// scores for the first six.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Stage(StageClass),
    Eod,
    Sod,
}

pub const EOD_INDEX: usize = 5;
pub const SOD_INDEX: usize = 6;
/// Number of decoder outputs (stages + EOD).
pub const N_OUTPUTS: usize = 6;
/// Number of decoder input symbols (stages + EOD + SOD).
pub const N_SYMBOLS: usize = 7;

impl Symbol {
    pub fn index(self) -> usize {
        match self {
            Self::Stage(c) => c.index(),
            Self::Eod => EOD_INDEX,
            Self::Sod => SOD_INDEX,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            EOD_INDEX => Some(Self::Eod),
            SOD_INDEX => Some(Self::Sod),
            _ => StageClass::from_index(i).map(Self::Stage),
        }
    }

    pub fn stage(self) -> Option<StageClass> {
        match self {
            Self::Stage(c) => Some(c),
            _ => None,
        }
    }
}

/// Where an epoch came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochOrigin {
    Recorded,
    /// SMOTE interpolation `base + u * (neighbor - base)`; indices refer to
    /// the slice passed to [`smote_oversample`].
    Synthetic { base: usize, neighbor: usize, u: f64 },
}

/// One 30-s window. Samples are stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpoch {
    pub samples: Vec<f32>,
    pub label: StageClass,
    pub subject_id: String,
    /// Index of the 30-s window from the start of the recording.
    pub position: usize,
    pub origin: EpochOrigin,
}

impl LabeledEpoch {
    pub fn is_synthetic(&self) -> bool {
        matches!(self.origin, EpochOrigin::Synthetic { .. })
    }
}

/// Per-class epoch counts, indexed by [`StageClass::index`].
pub fn class_counts<'a>(epochs: impl IntoIterator<Item = &'a LabeledEpoch>) -> [usize; N_STAGES] {
    let mut counts = [0; N_STAGES];
    for e in epochs {
        counts[e.label.index()] += 1;
    }
    counts
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sampling rate {rate} Hz does not give a whole number of samples per 30-s epoch")]
    FractionalEpoch { rate: f64 },
    #[error("annotation window at {onset_s}s does not start on a sample boundary")]
    MisalignedOnset { onset_s: f64 },
    #[error("annotation window {start_s}s..{end_s}s exceeds the signal ({signal_s}s)")]
    WindowExceedsSignal { start_s: f64, end_s: f64, signal_s: f64 },
    #[error("maxtime must be at least 1")]
    ZeroMaxtime,
    #[error("cannot split {subjects} subject(s) into {k} folds")]
    InvalidFoldCount { k: usize, subjects: usize },
    #[error("k_neighbors must be at least 1")]
    ZeroNeighbors,
    #[error("epoch {index} has {found} samples, expected {expected}")]
    EpochLength { index: usize, expected: usize, found: usize },
    #[error("invalid fold plan line {line}: {reason}")]
    FoldPlanFormat { line: usize, reason: String },
    #[error("dataset file: {0}")]
    Dataset(String),
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
