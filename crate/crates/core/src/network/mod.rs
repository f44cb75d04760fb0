//! The sequence model: a two-branch CNN turns each 30-s epoch into a feature
//! vector, a bidirectional LSTM encodes the sequence of feature vectors, and
//! an LSTM decoder with additive attention emits one stage per epoch.

mod config;
mod model;

pub use config::{BranchConfig, ConvLayer, ModelConfig, Pool};
pub use model::{
    argmax_stage, lstm_cell, AttentionRecord, DecoderOutput, EncoderStates, InferenceOutput, LstmVars, Model,
};

use thiserror::Error;

use crate::compute::{CheckpointError, ComputeError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("epoch {index} has {found} samples, the model expects {expected}")]
    EpochLength { index: usize, expected: usize, found: usize },
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("decoder input: {0}")]
    DecoderInput(String),
    #[error("attention weights at decode step {step} violate the simplex constraint (sum {sum}, min {min})")]
    Attention { step: usize, sum: f64, min: f64 },
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
