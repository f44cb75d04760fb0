//! Mini-batch training: teacher-forced forward passes, the chosen loss plus
//! L2 over the whole batch, RMSProp updates and resumable state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{Checkpoint, CheckpointError, ComputeError, Gradients, Graph, Mode, RmsProp, RmsPropConfig, Tensor, Var};
use crate::loss::{add_l2_gradient, l2_penalty, loss_graph, LossError, LossKind};
use crate::network::{argmax_stage, Model, NetworkError};
use crate::par::{self, Execution};
use crate::pipeline::{EpochSequence, StageClass, Symbol, EOD_INDEX, N_OUTPUTS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("loss became non-finite ({value}) at step {step}")]
    NonFinite { step: u64, value: f64 },
    #[error("empty training batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: RmsPropConfig,
    pub l2_beta: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Whether EOD positions form their own loss class. When false they are
    /// left out of the loss.
    pub eod_as_class: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: RmsPropConfig::default(),
            l2_beta: 1e-3,
            batch_size: 20,
            loss: LossKind::Mfe,
            eod_as_class: true,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

/// Outcome of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// `data_loss + l2`.
    pub loss: f64,
    pub data_loss: f64,
    pub l2: f64,
    pub gradients: Gradients,
    /// Teacher-forced stage predictions that matched the target (EOD steps
    /// excluded).
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub data_loss: f64,
    pub l2: f64,
    pub correct: usize,
    pub total: usize,
}

impl StepReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Loss and summed parameter gradients for a batch. Each sequence gets its
/// own graph (built in parallel under `exec`); the loss is taken over the
/// concatenated probabilities of the whole batch, and its gradient is pushed
/// back into every sequence graph. Gradients are summed in batch order, so
/// the result does not depend on `exec`.
pub fn batch_gradients(
    model: &Model,
    batch: &[&EpochSequence],
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<BatchResult, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let exec = config.execution;
    let forwards: Vec<Result<(Graph<'_>, Var), TrainError>> = par::map_range(exec, batch.len(), |i| {
        let seq = batch[i];
        let mut g = model.graph(Mode::Train { seed: mix(dropout_seed, i as u64, 1) });
        let epochs: Vec<&[f32]> = seq.inputs.iter().map(|e| e.samples.as_slice()).collect();
        let out = model.forward_teacher(&mut g, &epochs, &seq.teacher_inputs())?;
        let probs = g.softmax(out.logits, 1)?;
        Ok((g, probs))
    });
    let forwards: Vec<(Graph<'_>, Var)> = forwards.into_iter().collect::<Result<_, _>>()?;

    let mut head = Graph::detached(Mode::Inference);
    let mut parts = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    let mut groups = Vec::new();
    let (mut correct, mut total) = (0, 0);
    for ((g, probs), seq) in forwards.iter().zip(batch) {
        let p = g.tensor(*probs);
        for (row, t) in p.data().chunks(N_OUTPUTS).zip(&seq.targets) {
            if let Symbol::Stage(c) = t {
                total += 1;
                correct += usize::from(argmax_stage(row) == *c);
            }
        }
        parts.push(head.variable(p));
        for t in &seq.targets {
            targets.push(t.index());
            groups.push(match t {
                Symbol::Eod if !config.eod_as_class => None,
                _ => Some(t.index()),
            });
        }
    }
    let all = head.concat(&parts, 0)?;
    let loss = loss_graph(&mut head, config.loss, all, &targets, &groups, EOD_INDEX + 1)?;
    head.backward(loss)?;
    let data_loss = head.value(loss)[0];

    let mut gradients = Gradients::zeros_like(model.params());
    let jobs: Vec<(Graph<'_>, Var, Vec<f64>)> = forwards
        .into_iter()
        .zip(&parts)
        .map(|((g, probs), part)| {
            let seed = head.grad(*part).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(probs).len()]);
            (g, probs, seed)
        })
        .collect();
    // Bound the number of live per-sequence gradient buffers.
    let chunk = par::threads(exec).max(1);
    let mut jobs = jobs.into_iter();
    loop {
        let block: Vec<_> = jobs.by_ref().take(chunk).collect();
        if block.is_empty() {
            break;
        }
        let partial = par::map_vec(exec, block, |(mut g, probs, seed)| -> Result<Gradients, TrainError> {
            g.backward_with(probs, &seed)?;
            let mut out = Gradients::zeros_like(model.params());
            g.param_grads_into(&mut out);
            Ok(out)
        });
        for p in partial {
            gradients.add_assign(&p?);
        }
    }
    let l2 = l2_penalty(model.params(), config.l2_beta);
    add_l2_gradient(model.params(), config.l2_beta, &mut gradients);
    Ok(BatchResult { loss: data_loss + l2, data_loss, l2, gradients, correct, total })
}

/// Model plus optimizer state and step counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    optimizer: RmsProp,
    step: u64,
    epoch: u64,
    /// Batches of the current pass already taken.
    batch_in_epoch: u64,
}

const OPTIMIZER_PREFIX: &str = "optimizer.rmsprop.";
const STEP_KEY: &str = "trainer.step";
const EPOCH_KEY: &str = "trainer.epoch";
const BATCH_KEY: &str = "trainer.batch";

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let optimizer = RmsProp::new(config.optimizer, model.params());
        Self { model, config, optimizer, step: 0, epoch: 0, batch_in_epoch: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch_count(&self) -> u64 {
        self.epoch
    }

    /// One optimizer update on `batch`.
    pub fn step(&mut self, batch: &[&EpochSequence]) -> Result<StepReport, TrainError> {
        let seed = mix(self.config.seed, self.step, 2);
        let step = self.step + 1;
        let r = match batch_gradients(&self.model, batch, &self.config, seed) {
            Err(TrainError::Network(NetworkError::Attention { sum, .. })) if !sum.is_finite() => {
                return Err(TrainError::NonFinite { step, value: sum });
            }
            r => r?,
        };
        if !r.loss.is_finite() || !r.gradients.all_finite() {
            return Err(TrainError::NonFinite { step, value: r.loss });
        }
        self.optimizer.step(self.model.params_mut(), &r.gradients)?;
        self.step = step;
        Ok(StepReport { step, loss: r.loss, data_loss: r.data_loss, l2: r.l2, correct: r.correct, total: r.total })
    }

    /// One pass over `sequences` in a seeded shuffled order, in batches of
    /// `batch_size` (the last one may be smaller). `on_step` sees every
    /// report and may stop the pass early by returning `false`; the next call
    /// then continues the same pass where it stopped.
    pub fn train_epoch(
        &mut self,
        sequences: &[EpochSequence],
        mut on_step: impl FnMut(&StepReport) -> bool,
    ) -> Result<Vec<StepReport>, TrainError> {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.epoch, 3)));
        let mut reports = Vec::new();
        let done = self.batch_in_epoch as usize;
        for chunk in order.chunks(self.config.batch_size.max(1)).skip(done) {
            let batch: Vec<&EpochSequence> = chunk.iter().map(|&i| &sequences[i]).collect();
            let r = self.step(&batch)?;
            self.batch_in_epoch += 1;
            reports.push(r);
            if !on_step(&r) {
                return Ok(reports);
            }
        }
        self.epoch += 1;
        self.batch_in_epoch = 0;
        Ok(reports)
    }

    /// Parameters, optimizer accumulators and counters.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.extend(self.optimizer.state_tensors(self.model.params(), OPTIMIZER_PREFIX));
        c.push(STEP_KEY, Tensor::scalar(self.step as f64));
        c.push(EPOCH_KEY, Tensor::scalar(self.epoch as f64));
        c.push(BATCH_KEY, Tensor::scalar(self.batch_in_epoch as f64));
        c
    }

    /// Restores a state written by [`Trainer::to_checkpoint`]. A checkpoint
    /// holding only parameters restarts the optimizer and counters.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), TrainError> {
        self.model.load_checkpoint(ckpt)?;
        self.optimizer = RmsProp::new(self.config.optimizer, self.model.params());
        self.step = 0;
        self.epoch = 0;
        self.batch_in_epoch = 0;
        if ckpt.get(STEP_KEY).is_some() {
            self.optimizer.load_state(self.model.params(), |n| ckpt.get(n).cloned(), OPTIMIZER_PREFIX)?;
            self.step = ckpt.get(STEP_KEY).map_or(0, |t| t.data()[0] as u64);
            self.epoch = ckpt.get(EPOCH_KEY).map_or(0, |t| t.data()[0] as u64);
            self.batch_in_epoch = ckpt.get(BATCH_KEY).map_or(0, |t| t.data()[0] as u64);
        }
        Ok(())
    }
}

/// Teacher-forced stage predictions with dropout off, one per epoch of `seq`.
pub fn teacher_forced_predictions(model: &Model, seq: &EpochSequence) -> Result<Vec<StageClass>, TrainError> {
    let mut g = model.graph(Mode::Inference);
    let epochs: Vec<&[f32]> = seq.inputs.iter().map(|e| e.samples.as_slice()).collect();
    let out = model.forward_teacher(&mut g, &epochs, &seq.teacher_inputs())?;
    let probs = g.softmax(out.logits, 1)?;
    Ok(g.value(probs).chunks(N_OUTPUTS).take(seq.len()).map(argmax_stage).collect())
}
