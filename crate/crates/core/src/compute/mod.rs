//! Reverse-mode automatic differentiation over dense `f64` tensors, together
//! with the optimizer, finite-difference checker and checkpoint format used to
//! train the network.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Graph, Mode, Var};
pub use optim::{RmsProp, RmsPropConfig};
pub use params::{Gradients, Param, ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("objective evaluated to a non-finite value ({0})")]
    NonFinite(f64),
}
