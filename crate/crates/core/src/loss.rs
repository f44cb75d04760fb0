//! Imbalance-aware losses over decoder probability outputs.
//!
//! The per-sample error is the mean over the `C` output dimensions of
//! `(y - p)^2`. `l(c)` is the mean of per-sample errors over the samples whose
//! true class is `c`; MFE sums `l(c)` over classes and MSFE sums `l(c)^2`, so
//! every class weighs the same regardless of how many samples it has. Classes
//! absent from a batch contribute nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{ComputeError, Gradients, Graph, ParamKind, ParamStore, Tensor, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("probabilities have {probs} values but targets have {targets}")]
    ShapeMismatch { probs: usize, targets: usize },
    #[error("sample {sample} has class {class}, but only {n_classes} classes exist")]
    ClassOutOfRange { sample: usize, class: usize, n_classes: usize },
    #[error(transparent)]
    Compute(#[from] ComputeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mfe,
    Msfe,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mfe" => Ok(Self::Mfe),
            "msfe" => Ok(Self::Msfe),
            "mse" => Ok(Self::Mse),
            other => Err(format!("unknown loss {other:?} (expected mfe, msfe or mse)")),
        }
    }
}

/// `l(c)` per class together with the sample count behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClasswiseError {
    pub errors: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Mean of `(targets - probs)^2` over each row of width `width`.
pub fn per_sample_error(probs: &[f64], targets: &[f64], width: usize) -> Result<Vec<f64>, LossError> {
    if probs.len() != targets.len() || width == 0 || !probs.len().is_multiple_of(width) {
        return Err(LossError::ShapeMismatch { probs: probs.len(), targets: targets.len() });
    }
    Ok(probs
        .chunks(width)
        .zip(targets.chunks(width))
        .map(|(p, y)| p.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / width as f64)
        .collect())
}

/// `probs` and `targets` are row-major `[samples, width]`; `class_of_sample`
/// gives each row's true class in `0..n_classes`.
pub fn per_class_error(
    probs: &[f64],
    targets: &[f64],
    width: usize,
    class_of_sample: &[usize],
    n_classes: usize,
) -> Result<ClasswiseError, LossError> {
    let e = per_sample_error(probs, targets, width)?;
    if e.len() != class_of_sample.len() {
        return Err(LossError::ShapeMismatch { probs: e.len(), targets: class_of_sample.len() });
    }
    let mut sums = vec![0.0; n_classes];
    let mut counts = vec![0; n_classes];
    for (sample, (&err, &class)) in e.iter().zip(class_of_sample).enumerate() {
        if class >= n_classes {
            return Err(LossError::ClassOutOfRange { sample, class, n_classes });
        }
        sums[class] += err;
        counts[class] += 1;
    }
    let errors = sums.iter().zip(&counts).map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect();
    Ok(ClasswiseError { errors, counts })
}

pub fn mfe(e: &ClasswiseError) -> f64 {
    e.errors.iter().sum()
}

pub fn msfe(e: &ClasswiseError) -> f64 {
    e.errors.iter().map(|l| l * l).sum()
}

/// Plain mean squared error over every sample and output dimension.
pub fn mse(probs: &[f64], targets: &[f64], width: usize) -> Result<f64, LossError> {
    let e = per_sample_error(probs, targets, width)?;
    Ok(if e.is_empty() { 0.0 } else { e.iter().sum::<f64>() / e.len() as f64 })
}

pub fn loss_value(kind: LossKind, probs: &[f64], targets: &[f64], width: usize, class_of_sample: &[usize], n_classes: usize) -> Result<f64, LossError> {
    match kind {
        LossKind::Mse => mse(probs, targets, width),
        LossKind::Mfe => Ok(mfe(&per_class_error(probs, targets, width, class_of_sample, n_classes)?)),
        LossKind::Msfe => Ok(msfe(&per_class_error(probs, targets, width, class_of_sample, n_classes)?)),
    }
}

/// One-hot rows of width `width` for the given indices.
pub fn one_hot(indices: &[usize], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; indices.len() * width];
    for (r, &i) in indices.iter().enumerate() {
        out[r * width + i] = 1.0;
    }
    out
}

/// The chosen loss as a differentiable graph node. `probs` is `[samples, C]`;
/// `targets` holds each row's target index in `0..C` and `class_of_sample`
/// its loss group in `0..n_classes`. Rows whose group is `None` are left out.
pub fn loss_graph(
    g: &mut Graph<'_>,
    kind: LossKind,
    probs: Var,
    targets: &[usize],
    class_of_sample: &[Option<usize>],
    n_classes: usize,
) -> Result<Var, LossError> {
    let (rows, width) = match g.shape(probs) {
        [r, c] => (*r, *c),
        s => return Err(LossError::ShapeMismatch { probs: s.iter().product(), targets: targets.len() }),
    };
    if targets.len() != rows || class_of_sample.len() != rows {
        return Err(LossError::ShapeMismatch { probs: rows, targets: targets.len().min(class_of_sample.len()) });
    }
    for (sample, &t) in targets.iter().enumerate() {
        if t >= width {
            return Err(LossError::ClassOutOfRange { sample, class: t, n_classes: width });
        }
    }
    let y = g.constant(Tensor::new(vec![rows, width], one_hot(targets, width))?);
    let diff = g.sub(probs, y)?;
    let sq = g.square(diff);
    let avg = g.constant(Tensor::filled(vec![width, 1], 1.0 / width as f64));
    let per_sample = g.matmul(sq, avg)?;

    let groups = match kind {
        LossKind::Mse => 1,
        _ => n_classes,
    };
    let mut counts = vec![0usize; groups];
    for (sample, c) in class_of_sample.iter().enumerate() {
        if let Some(c) = *c {
            if c >= n_classes {
                return Err(LossError::ClassOutOfRange { sample, class: c, n_classes });
            }
            counts[if kind == LossKind::Mse { 0 } else { c }] += 1;
        }
    }
    let mut m = vec![0.0; groups * rows];
    for (s, c) in class_of_sample.iter().enumerate() {
        if let Some(c) = *c {
            let gi = if kind == LossKind::Mse { 0 } else { c };
            m[gi * rows + s] = 1.0 / counts[gi] as f64;
        }
    }
    let m = g.constant(Tensor::new(vec![groups, rows], m)?);
    let l = g.matmul(m, per_sample)?;
    Ok(match kind {
        LossKind::Mfe | LossKind::Mse => g.sum(l),
        LossKind::Msfe => {
            let l2 = g.square(l);
            g.sum(l2)
        }
    })
}

/// `beta * sum(w^2)` over weight parameters; biases are excluded.
pub fn l2_penalty(params: &ParamStore, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    beta * params
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight)
        .map(|(_, p)| p.value.data().iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
}

/// Adds `2 * beta * w` to the gradient of every weight parameter.
pub fn add_l2_gradient(params: &ParamStore, beta: f64, grads: &mut Gradients) {
    if beta == 0.0 {
        return;
    }
    for (id, p) in params.iter() {
        if p.kind != ParamKind::Weight {
            continue;
        }
        for (g, w) in grads.get_mut(id).iter_mut().zip(p.value.data()) {
            *g += 2.0 * beta * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Mode;

    fn ce(errors: Vec<f64>) -> ClasswiseError {
        let counts = vec![1; errors.len()];
        ClasswiseError { errors, counts }
    }

    #[test]
    fn worked_values() {
        let l = ce(vec![0.2, 0.4]);
        assert!((mfe(&l) - 0.6).abs() < 1e-15);
        assert!((msfe(&l) - 0.2).abs() < 1e-15);
        assert_eq!(mfe(&ce(vec![0.0; 5])), 0.0);
    }

    #[test]
    fn class_means() {
        // width-1 rows make the per-sample error the squared difference itself.
        let probs = [0.1f64.sqrt(), 0.3f64.sqrt(), 0.4f64.sqrt()];
        let targets = [0.0; 3];
        let e = per_class_error(&probs, &targets, 1, &[0, 0, 1], 2).unwrap();
        assert!((e.errors[0] - 0.2).abs() < 1e-12);
        assert!((e.errors[1] - 0.4).abs() < 1e-12);
        assert_eq!(e.counts, vec![2, 1]);
    }

    #[test]
    fn perfect_predictions_are_zero() {
        let t = one_hot(&[0, 2, 1], 3);
        let e = per_class_error(&t, &t, 3, &[0, 2, 1], 3).unwrap();
        assert!(e.errors.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn absent_class_contributes_zero() {
        let e = per_class_error(&[0.5, 0.5], &[1.0, 0.0], 2, &[0], 5).unwrap();
        assert_eq!(&e.errors[1..], &[0.0; 4]);
    }

    #[test]
    fn out_of_range_class() {
        assert!(matches!(
            per_class_error(&[0.5, 0.5], &[1.0, 0.0], 2, &[7], 5),
            Err(LossError::ClassOutOfRange { class: 7, .. })
        ));
    }

    #[test]
    fn graph_matches_direct() {
        let probs = vec![0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4, 0.25, 0.25, 0.5];
        let targets = [0, 1, 2, 2];
        let classes = [0, 1, 2, 2];
        let y = one_hot(&targets, 3);
        for kind in [LossKind::Mfe, LossKind::Msfe, LossKind::Mse] {
            let mut g = Graph::detached(Mode::Inference);
            let p = g.variable(Tensor::new(vec![4, 3], probs.clone()).unwrap());
            let groups: Vec<_> = classes.iter().map(|&c| Some(c)).collect();
            let l = loss_graph(&mut g, kind, p, &targets, &groups, 3).unwrap();
            let direct = loss_value(kind, &probs, &y, 3, &classes, 3).unwrap();
            assert!((g.value(l)[0] - direct).abs() < 1e-14, "{kind:?}");
        }
    }

    #[test]
    fn excluded_rows_ignored() {
        let mut g = Graph::detached(Mode::Inference);
        let p = g.variable(Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.0, 1.0]).unwrap());
        let l = loss_graph(&mut g, LossKind::Mfe, p, &[0, 0], &[Some(0), None], 1).unwrap();
        assert!((g.value(l)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn l2_single_weight() {
        let mut store = ParamStore::new();
        store.register("w", ParamKind::Weight, Tensor::scalar(2.0)).unwrap();
        store.register("b", ParamKind::Bias, Tensor::scalar(5.0)).unwrap();
        assert!((l2_penalty(&store, 0.001) - 0.004).abs() < 1e-15);
        assert_eq!(l2_penalty(&store, 0.0), 0.0);
        let mut g = Gradients::zeros_like(&store);
        add_l2_gradient(&store, 0.001, &mut g);
        assert_eq!(g.flatten(), vec![0.004, 0.0]);
    }
}
