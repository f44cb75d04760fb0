use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledEpoch, PipelineError};

/// Subject-to-fold assignment for inter-patient cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin into
/// `k` folds, so fold sizes differ by at most one subject.
pub fn split_folds<S: AsRef<str>>(subject_ids: &[S], k: usize, seed: u64) -> Result<FoldPlan, PipelineError> {
    let mut subjects: Vec<String> =
        subject_ids.iter().map(|s| s.as_ref().to_owned()).collect::<BTreeSet<_>>().into_iter().collect();
    if k == 0 || k > subjects.len() {
        return Err(PipelineError::InvalidFoldCount { k, subjects: subjects.len() });
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = subjects.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldPlan { k, assignment })
}

/// Epoch-level (intra-patient) fold indices, for comparison runs only: epochs
/// of one subject end up on both sides of the split.
pub fn split_epochs_intra(n_epochs: usize, k: usize, seed: u64) -> Result<Vec<usize>, PipelineError> {
    if k == 0 || k > n_epochs {
        return Err(PipelineError::InvalidFoldCount { k, subjects: n_epochs });
    }
    let mut order: Vec<usize> = (0..n_epochs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n_epochs];
    for (rank, idx) in order.into_iter().enumerate() {
        folds[idx] = rank % k;
    }
    Ok(folds)
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.assignment.get(subject).copied()
    }

    pub fn test_subjects(&self, round: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f == round).map(|(s, _)| s.as_str()).collect()
    }

    pub fn train_subjects(&self, round: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f != round).map(|(s, _)| s.as_str()).collect()
    }

    /// Whether `subject` belongs to the training side of `round`. Subjects
    /// missing from the plan are on neither side.
    pub fn is_train(&self, subject: &str, round: usize) -> bool {
        self.fold_of(subject).is_some_and(|f| f != round)
    }

    pub fn is_test(&self, subject: &str, round: usize) -> bool {
        self.fold_of(subject) == Some(round)
    }

    /// Splits epochs into (train, test) for `round`.
    pub fn partition<'a>(&self, epochs: &'a [LabeledEpoch], round: usize) -> (Vec<&'a LabeledEpoch>, Vec<&'a LabeledEpoch>) {
        let train = epochs.iter().filter(|e| self.is_train(&e.subject_id, round)).collect();
        let test = epochs.iter().filter(|e| self.is_test(&e.subject_id, round)).collect();
        (train, test)
    }

    /// One `subject_id<TAB>fold` line per subject, sorted by subject.
    pub fn to_tsv(&self) -> String {
        self.assignment.iter().map(|(s, f)| format!("{s}\t{f}\n")).collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, PipelineError> {
        let mut assignment = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| PipelineError::FoldPlanFormat { line: i + 1, reason: reason.to_owned() };
            let (subject, fold) = line.split_once('\t').ok_or_else(|| bad("expected subject<TAB>fold"))?;
            let fold: usize = fold.trim().parse().map_err(|_| bad("fold is not a non-negative integer"))?;
            if assignment.insert(subject.to_owned(), fold).is_some() {
                return Err(bad("subject listed twice"));
            }
        }
        let k = assignment.values().max().map_or(0, |m| m + 1);
        if k == 0 {
            return Err(PipelineError::FoldPlanFormat { line: 0, reason: "empty fold plan".into() });
        }
        Ok(Self { k, assignment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("SC4{i:02}")).collect()
    }

    #[test]
    fn one_subject_per_fold() {
        let plan = split_folds(&subjects(20), 20, 7).unwrap();
        let mut sizes = [0; 20];
        for f in plan.assignment.values() {
            sizes[*f] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = split_folds(&subjects(5), 2, 99).unwrap();
        let b = split_folds(&subjects(5), 2, 99).unwrap();
        assert_eq!(a, b);
        let n0 = a.assignment.values().filter(|&&f| f == 0).count();
        assert!(n0 == 2 || n0 == 3);
    }

    #[test]
    fn too_many_folds() {
        assert!(matches!(split_folds(&subjects(3), 4, 0), Err(PipelineError::InvalidFoldCount { .. })));
        assert!(split_folds(&subjects(3), 0, 0).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let plan = split_folds(&["a", "a", "b"], 2, 0).unwrap();
        assert_eq!(plan.assignment.len(), 2);
    }

    #[test]
    fn tsv_roundtrip() {
        let plan = split_folds(&subjects(7), 3, 1).unwrap();
        let text = plan.to_tsv();
        assert_eq!(FoldPlan::from_tsv(&text).unwrap(), plan);
        assert!(FoldPlan::from_tsv("a\tx\n").is_err());
        assert!(FoldPlan::from_tsv("a\t0\na\t1\n").is_err());
    }

    #[test]
    fn intra_patient_balanced() {
        let folds = split_epochs_intra(10, 3, 0).unwrap();
        let mut sizes = [0; 3];
        for f in folds {
            sizes[f] += 1;
        }
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
    }
}
