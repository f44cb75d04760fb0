//! EDF / EDF+ reading.
//!
//! Header text fields are printable ASCII with trailing-space padding. Samples
//! are 16-bit little-endian two's complement, mapped to physical units with
//! the per-signal affine calibration
//! `physical = pmin + (d - dmin) * (pmax - pmin) / (dmax - dmin)`.

mod annotations;
mod header;
mod recording;

pub use annotations::{
    parse_hypnogram, parse_tals, validate_stages, Annotation, Hypnogram, RawStage, StageAnnotation, STAGE_EPOCH_S,
};
pub use header::{EdfHeader, SignalHeader, ANNOTATION_LABEL};
pub use recording::{parse_edf, Channel, EdfRecording, SignalData};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("file truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("header field `{field}` contains non-printable or non-ASCII bytes")]
    NonAscii { field: &'static str },
    #[error("header field `{field}` is not a number: {text:?}")]
    InvalidNumber { field: &'static str, text: String },
    #[error("header field `{field}` is invalid: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("header declares {declared} bytes but {expected} are required for its signal count")]
    HeaderLength { declared: usize, expected: usize },
    #[error("signal {signal} has undefined scaling: {reason}")]
    DegenerateScaling { signal: usize, reason: String },
    #[error("discontinuous EDF+D recordings are not supported")]
    Discontinuous,
    #[error("no channel labelled {label:?} (available: {available:?})")]
    ChannelNotFound { label: String, available: Vec<String> },
    #[error("channel label {label:?} matches {matches} signals")]
    AmbiguousChannel { label: String, matches: usize },
    #[error("file has no `EDF Annotations` signal")]
    NoAnnotationSignal,
    #[error("malformed annotation at byte {offset}: {reason}")]
    MalformedAnnotation { offset: usize, reason: String },
    #[error("stage annotation at {onset_s}s has invalid duration {duration_s}s (must be a positive multiple of 30)")]
    StageDuration { onset_s: f64, duration_s: f64 },
    #[error("stage annotations at {first_onset_s}s and {second_onset_s}s overlap")]
    OverlappingStages { first_onset_s: f64, second_onset_s: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
