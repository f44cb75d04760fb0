use serde::{Deserialize, Serialize};

use super::{ComputeError, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, decay: 0.9, epsilon: 1e-10 }
    }
}

/// RMSProp without momentum:
/// `acc <- decay * acc + (1 - decay) * g^2`, `p <- p - lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulators: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, params: &ParamStore) -> Self {
        Self {
            config,
            accumulators: params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), ComputeError> {
        if grads.len() != params.len() || self.accumulators.len() != params.len() {
            return Err(ComputeError::InvalidArgument {
                op: "rmsprop_step",
                reason: format!(
                    "{} parameters, {} gradients, {} accumulators",
                    params.len(),
                    grads.len(),
                    self.accumulators.len()
                ),
            });
        }
        let RmsPropConfig { learning_rate, decay, epsilon } = self.config;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let acc = &mut self.accumulators[id.index()];
            let p = params.get_mut(id).value.data_mut();
            if g.len() != p.len() {
                return Err(ComputeError::ShapeMismatch { op: "rmsprop_step", lhs: vec![p.len()], rhs: vec![g.len()] });
            }
            for ((w, a), &gi) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a = decay * *a + (1.0 - decay) * gi * gi;
                *w -= learning_rate * gi / (a.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Accumulators as named tensors (`<prefix><param name>`) for checkpointing.
    pub fn state_tensors(&self, params: &ParamStore, prefix: &str) -> Vec<(String, Tensor)> {
        params
            .iter()
            .zip(&self.accumulators)
            .map(|((_, p), acc)| {
                let t = Tensor::new(p.value.shape().to_vec(), acc.clone()).expect("accumulator matches parameter");
                (format!("{prefix}{}", p.name), t)
            })
            .collect()
    }

    pub fn load_state(&mut self, params: &ParamStore, lookup: impl Fn(&str) -> Option<Tensor>, prefix: &str) -> Result<(), ComputeError> {
        for (id, p) in params.iter() {
            let name = format!("{prefix}{}", p.name);
            let t = lookup(&name).ok_or_else(|| ComputeError::InvalidArgument {
                op: "load_state",
                reason: format!("missing optimizer state `{name}`"),
            })?;
            if t.shape() != p.value.shape() {
                return Err(ComputeError::ShapeMismatch { op: "load_state", lhs: p.value.shape().to_vec(), rhs: t.shape().to_vec() });
            }
            self.accumulators[id.index()] = t.into_data();
        }
        Ok(())
    }
}
