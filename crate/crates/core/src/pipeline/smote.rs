//! Synthetic minority over-sampling on raw epoch vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};

use super::{class_counts, EpochOrigin, LabeledEpoch, PipelineError, StageClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Per-class target counts; classes not listed are left as they are.
    /// `None` balances every present class up to the majority count.
    pub targets: Option<BTreeMap<StageClass, usize>>,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, targets: None }
    }
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Originals first (input order), then synthetic epochs.
    pub epochs: Vec<LabeledEpoch>,
    pub n_synthetic: usize,
    /// Classes with a single member that were duplicated instead of
    /// interpolated.
    pub duplicated: Vec<StageClass>,
}

impl SmoteOutput {
    pub fn synthetic(&self) -> &[LabeledEpoch] {
        &self.epochs[self.epochs.len() - self.n_synthetic..]
    }
}

/// Every present class targeted at the majority-class count.
pub fn balanced_targets(epochs: &[LabeledEpoch]) -> BTreeMap<StageClass, usize> {
    let counts = class_counts(epochs);
    let max = counts.iter().copied().max().unwrap_or(0);
    StageClass::ALL.into_iter().filter(|c| counts[c.index()] > 0).map(|c| (c, max)).collect()
}

/// `x + u * (neighbor - x)`.
pub fn interpolate(x: &[f32], neighbor: &[f32], u: f64) -> Vec<f32> {
    x.iter()
        .zip(neighbor)
        .map(|(&a, &b)| (f64::from(a) + u * (f64::from(b) - f64::from(a))) as f32)
        .collect()
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| {
        let d = f64::from(x) - f64::from(y);
        d * d
    }).sum()
}

/// Up to `k` nearest members of `members` to `members[query]` (excluding
/// itself), ties broken by index.
fn nearest(epochs: &[LabeledEpoch], members: &[usize], query: usize, k: usize) -> Vec<usize> {
    let q = &epochs[members[query]].samples;
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(_, &m)| (squared_distance(q, &epochs[m].samples), m))
        .collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, m)| m).collect()
}

/// Raises each targeted class to its target count. Originals are always kept;
/// classes already at or above target are untouched. Each synthetic epoch
/// interpolates a base member (cycled in input order) towards one of its
/// `k_neighbors` nearest same-class members by a uniform `u` in `[0, 1]`.
///
/// Randomness is drawn per class from `seed` on an independent stream, so the
/// output does not depend on `exec`.
pub fn smote_oversample(
    epochs: &[LabeledEpoch],
    targets: &BTreeMap<StageClass, usize>,
    k_neighbors: usize,
    seed: u64,
    exec: Execution,
) -> Result<SmoteOutput, PipelineError> {
    if k_neighbors == 0 {
        return Err(PipelineError::ZeroNeighbors);
    }
    let mut out = epochs.to_vec();
    let mut duplicated = Vec::new();
    for (&class, &target) in targets {
        let members: Vec<usize> = (0..epochs.len()).filter(|&i| epochs[i].label == class).collect();
        let n = members.len();
        if n >= target {
            continue;
        }
        if n == 0 {
            log::warn!("SMOTE: class {class} has no members; target {target} not reachable");
            continue;
        }
        let need = target - n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class.index() as u64);

        if n == 1 {
            log::warn!("SMOTE: class {class} has a single member; duplicating it {need} time(s)");
            duplicated.push(class);
            let base = members[0];
            for _ in 0..need {
                let mut e = epochs[base].clone();
                e.origin = EpochOrigin::Synthetic { base, neighbor: base, u: 0.0 };
                out.push(e);
            }
            continue;
        }

        let k = k_neighbors.min(n - 1);
        let bases = need.min(n);
        let neighbors = par::map_range(exec, bases, |j| nearest(epochs, &members, j, k));
        for j in 0..need {
            let slot = j % n;
            let base = members[slot];
            let nb = &neighbors[slot];
            let neighbor = nb[rng.gen_range(0..nb.len())];
            let u: f64 = rng.gen_range(0.0..=1.0);
            let src = &epochs[base];
            out.push(LabeledEpoch {
                samples: interpolate(&src.samples, &epochs[neighbor].samples, u),
                label: class,
                subject_id: src.subject_id.clone(),
                position: src.position,
                origin: EpochOrigin::Synthetic { base, neighbor, u },
            });
        }
    }
    let n_synthetic = out.len() - epochs.len();
    Ok(SmoteOutput { epochs: out, n_synthetic, duplicated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(label: StageClass, samples: Vec<f32>, subject: &str) -> LabeledEpoch {
        LabeledEpoch { samples, label, subject_id: subject.into(), position: 0, origin: EpochOrigin::Recorded }
    }

    #[test]
    fn interpolation_endpoints() {
        let x = [1.0, -2.0, 0.5];
        let y = [3.0, 4.0, -1.0];
        assert_eq!(interpolate(&x, &y, 0.0), x.to_vec());
        assert_eq!(interpolate(&x, &y, 1.0), y.to_vec());
    }

    #[test]
    fn counts_reach_targets() {
        let mut epochs = Vec::new();
        for i in 0..100 {
            epochs.push(epoch(StageClass::W, vec![i as f32, 0.0], "a"));
        }
        for i in 0..10 {
            epochs.push(epoch(StageClass::N1, vec![0.0, i as f32], "a"));
        }
        let targets = BTreeMap::from([(StageClass::W, 100), (StageClass::N1, 100)]);
        let out = smote_oversample(&epochs, &targets, 5, 3, Execution::Sequential).unwrap();
        let counts = class_counts(&out.epochs);
        assert_eq!(counts[StageClass::W.index()], 100);
        assert_eq!(counts[StageClass::N1.index()], 100);
        assert_eq!(out.n_synthetic, 90);
        assert_eq!(&out.epochs[..110], &epochs[..]);
        assert!(out.synthetic().iter().all(|e| e.label == StageClass::N1));
    }

    #[test]
    fn neighbors_are_nearest() {
        let epochs: Vec<_> = [0.0f32, 1.0, 2.0, 10.0, 11.0].iter().map(|&v| epoch(StageClass::N3, vec![v], "a")).collect();
        let members: Vec<usize> = (0..5).collect();
        assert_eq!(nearest(&epochs, &members, 0, 2), vec![1, 2]);
        assert_eq!(nearest(&epochs, &members, 4, 1), vec![3]);
    }

    #[test]
    fn single_member_duplicated() {
        let epochs = vec![epoch(StageClass::W, vec![1.0], "a"), epoch(StageClass::W, vec![2.0], "a"), epoch(StageClass::Rem, vec![5.0], "a")];
        let out = smote_oversample(&epochs, &balanced_targets(&epochs), 5, 0, Execution::Sequential).unwrap();
        assert_eq!(out.duplicated, vec![StageClass::Rem]);
        assert_eq!(out.synthetic(), &[LabeledEpoch { origin: EpochOrigin::Synthetic { base: 2, neighbor: 2, u: 0.0 }, ..epochs[2].clone() }]);
    }

    #[test]
    fn zero_neighbors_rejected() {
        assert!(matches!(
            smote_oversample(&[], &BTreeMap::new(), 0, 0, Execution::Sequential),
            Err(PipelineError::ZeroNeighbors)
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let epochs: Vec<_> = (0..40)
            .map(|i| epoch(if i % 4 == 0 { StageClass::N1 } else { StageClass::N2 }, vec![(i * 7 % 13) as f32, i as f32], "a"))
            .collect();
        let t = balanced_targets(&epochs);
        let a = smote_oversample(&epochs, &t, 3, 11, Execution::Sequential).unwrap();
        let b = smote_oversample(&epochs, &t, 3, 11, Execution::Parallel).unwrap();
        assert_eq!(a.epochs, b.epochs);
    }
}
