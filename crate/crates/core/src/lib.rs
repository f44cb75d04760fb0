//! Single-channel EEG sleep staging.
//!
//! [`edf`] reads recordings and hypnograms, [`pipeline`] turns them into
//! normalized 30-s epochs and decoder-framed sequences, [`compute`] is a small
//! reverse-mode autodiff core, [`network`] builds the CNN + BiLSTM + attention
//! sequence model on top of it, [`loss`] and [`eval`] hold the training
//! objectives and the metric suite.

pub mod compute;
pub mod edf;
pub mod pipeline;
pub mod par;
pub mod scoring;
pub mod eval;
pub mod loss;
pub mod network;
pub mod synth;
pub mod training;
