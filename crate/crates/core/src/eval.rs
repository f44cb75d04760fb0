//! Confusion matrices and the metric suite: per-class precision, recall,
//! specificity and F1, overall accuracy, macro F1 and Cohen's kappa.
//!
//! Percentages are in `[0, 100]`. A metric whose denominator is zero is
//! `None` and printed as `n/a`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{StageClass, N_STAGES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{pred} predictions for {truth} ground-truth labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("label {0} is not a sleep stage index")]
    LabelOutOfRange(usize),
    #[error("subject {0:?} appears in more than one fold")]
    DuplicateSubject(String),
    #[error("confusion matrix is empty")]
    Empty,
}

/// Rows are the true stage, columns the predicted stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_STAGES]; N_STAGES],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; N_STAGES]; N_STAGES]) -> Self {
        Self { counts }
    }

    pub fn from_labels(pred: &[StageClass], truth: &[StageClass]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
        }
        let mut cm = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            cm.counts[t.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn add(&mut self, actual: StageClass, predicted: StageClass) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_STAGES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Builds a matrix from integer label indices (`0..5`).
pub fn confusion(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        for l in [p, t] {
            if l >= N_STAGES {
                return Err(EvalError::LabelOutOfRange(l));
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// F1 is computed as `2TP / (2TP + FP + FN)`, which equals `2PR / (P + R)`
/// whenever the latter is defined and is `0` when the class is predicted or
/// present but never hit.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> [ClassMetrics; N_STAGES] {
    let total = cm.total();
    std::array::from_fn(|i| {
        let tp = cm.counts[i][i];
        let fp = cm.col_sum(i) - tp;
        let fn_ = cm.row_sum(i) - tp;
        let tn = total - tp - fp - fn_;
        ClassMetrics {
            precision: pct(tp, tp + fp),
            recall: pct(tp, tp + fn_),
            specificity: pct(tn, tn + fp),
            f1: pct(2 * tp, 2 * tp + fp + fn_),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub accuracy: f64,
    /// Unweighted mean of the five class F1 values; `None` if any is undefined.
    pub macro_f1: Option<f64>,
    /// `None` when chance agreement is 1.
    pub kappa: Option<f64>,
}

pub fn overall_metrics(cm: &ConfusionMatrix) -> Result<OverallMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let n = total as f64;
    let po = cm.trace() as f64 / n;
    let pe = (0..N_STAGES).map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64).sum::<f64>() / (n * n);
    let kappa = (pe < 1.0).then(|| (po - pe) / (1.0 - pe));
    let f1s: Option<Vec<f64>> = per_class_metrics(cm).iter().map(|m| m.f1).collect();
    let macro_f1 = f1s.map(|f| f.iter().sum::<f64>() / N_STAGES as f64);
    Ok(OverallMetrics { accuracy: 100.0 * po, macro_f1, kappa })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: [ClassMetrics; N_STAGES],
    pub overall: OverallMetrics,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, EvalError> {
        Ok(Self { per_class: per_class_metrics(&cm), overall: overall_metrics(&cm)?, confusion: cm })
    }

    /// Table layout: confusion counts with per-class metrics alongside, then
    /// the overall line.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6}{:>8}{:>8}{:>8}{:>8}{:>8}  |{:>8}{:>8}{:>8}{:>8}", "", "W", "N1", "N2", "N3", "REM", "Pre", "Rec", "Spe", "F1");
        for (i, class) in StageClass::ALL.iter().enumerate() {
            let _ = write!(s, "{:<6}", class.name());
            for c in &self.confusion.counts[i] {
                let _ = write!(s, "{c:>8}");
            }
            let m = &self.per_class[i];
            let _ = write!(s, "  |");
            for v in [m.precision, m.recall, m.specificity, m.f1] {
                let _ = write!(s, "{:>8}", fmt_opt(v, 2));
            }
            s.push('\n');
        }
        let o = &self.overall;
        let _ = writeln!(
            s,
            "total {}  accuracy {:.2}  MF1 {}  kappa {}",
            self.confusion.total(),
            o.accuracy,
            fmt_opt(o.macro_f1, 2),
            fmt_opt(o.kappa, 2)
        );
        s
    }
}

pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".to_owned(),
    }
}

/// Predictions of one cross-validation round.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub subjects: Vec<String>,
    pub pred: Vec<StageClass>,
    pub truth: Vec<StageClass>,
}

/// Pools every fold's predictions into one matrix and report.
pub fn aggregate_folds(folds: &[FoldResult]) -> Result<MetricsReport, EvalError> {
    let mut seen = BTreeSet::new();
    let mut cm = ConfusionMatrix::default();
    for f in folds {
        for s in &f.subjects {
            if !seen.insert(s.as_str()) {
                return Err(EvalError::DuplicateSubject(s.clone()));
            }
        }
        cm.merge(&ConfusionMatrix::from_labels(&f.pred, &f.truth)?);
    }
    MetricsReport::from_confusion(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use StageClass::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = confusion(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]).unwrap();
        for m in per_class_metrics(&cm) {
            assert_eq!(m, ClassMetrics { precision: Some(100.0), recall: Some(100.0), specificity: Some(100.0), f1: Some(100.0) });
        }
        let o = overall_metrics(&cm).unwrap();
        assert_eq!(o.accuracy, 100.0);
        assert_eq!(o.kappa, Some(1.0));
    }

    #[test]
    fn single_pair() {
        let cm = ConfusionMatrix::from_labels(&[N1], &[W]).unwrap();
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn input_errors() {
        assert_eq!(confusion(&[0], &[]), Err(EvalError::LengthMismatch { pred: 1, truth: 0 }));
        assert_eq!(confusion(&[5], &[0]), Err(EvalError::LabelOutOfRange(5)));
        assert_eq!(overall_metrics(&ConfusionMatrix::default()), Err(EvalError::Empty));
    }

    #[test]
    fn absent_class_is_undefined() {
        let cm = ConfusionMatrix::from_labels(&[W, N2, N2], &[W, N2, W]).unwrap();
        let m = per_class_metrics(&cm);
        assert_eq!(m[N1.index()].precision, None);
        assert_eq!(m[N1.index()].f1, None);
        assert_eq!(overall_metrics(&cm).unwrap().macro_f1, None);
        assert!(MetricsReport::from_confusion(cm).unwrap().to_table().contains("n/a"));
    }

    #[test]
    fn constant_agreement_kappa_undefined() {
        let cm = ConfusionMatrix::from_labels(&[W, W], &[W, W]).unwrap();
        assert_eq!(overall_metrics(&cm).unwrap().kappa, None);
    }

    #[test]
    fn duplicate_subject_rejected() {
        let f = FoldResult { subjects: vec!["a".into()], pred: vec![W], truth: vec![W] };
        assert_eq!(aggregate_folds(&[f.clone(), f]), Err(EvalError::DuplicateSubject("a".into())));
    }
}
