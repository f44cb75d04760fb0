use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepnet::edf::{RawStage, StageAnnotation};
use sleepnet::par::Execution;
use sleepnet::pipeline::{
    balanced_targets, class_counts, make_sequences, normalize, segment_epochs, smote_oversample, split_folds, EpochOrigin,
    LabeledEpoch, StageClass, Symbol,
};

const RAW: [RawStage; 8] =
    [RawStage::W, RawStage::S1, RawStage::S2, RawStage::S3, RawStage::S4, RawStage::R, RawStage::M, RawStage::Unknown];

fn config() -> ProptestConfig {
    ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() }
}

fn runs(rng: &mut impl Rng, stages: &[RawStage]) -> Vec<StageAnnotation> {
    let mut out = Vec::new();
    let mut onset = 0.0;
    for _ in 0..rng.gen_range(1..6) {
        let n = rng.gen_range(1..4);
        let label = stages[rng.gen_range(0..stages.len())];
        out.push(StageAnnotation { onset_s: onset, duration_s: 30.0 * n as f64, label });
        onset += 30.0 * n as f64;
    }
    out
}

#[test]
fn stage_mapping_total_except_movement_and_unscored() {
    let mapped: Vec<Option<StageClass>> = RAW.iter().map(|&r| StageClass::from_raw(r)).collect();
    use StageClass::*;
    assert_eq!(mapped, vec![Some(W), Some(N1), Some(N2), Some(N3), Some(N3), Some(Rem), None, None]);
}

#[test]
fn concatenated_epochs_reproduce_annotated_prefix() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rate = [1.0, 2.0, 100.0][rng.gen_range(0..3)];
        let anns = runs(&mut rng, &RAW);
        let covered = (anns.last().unwrap().end_s() * rate) as usize;
        let signal: Vec<f64> = (0..covered + rng.gen_range(0..200)).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let epochs = segment_epochs(&signal, rate, &anns, "s").unwrap();
        let spe = (30.0 * rate) as usize;
        // expected: the prefix with movement / unscored windows cut out
        let mut expected = Vec::new();
        for a in &anns {
            if StageClass::from_raw(a.label).is_none() {
                continue;
            }
            let start = (a.onset_s * rate) as usize;
            expected.extend(signal[start..start + a.n_epochs() * spe].iter().map(|&v| v as f32));
        }
        let joined: Vec<f32> = epochs.iter().flat_map(|e| e.samples.iter().copied()).collect();
        assert_eq!(joined, expected);
        let scoreable: Vec<RawStage> = anns.iter().filter(|a| StageClass::from_raw(a.label).is_some()).map(|a| a.label).collect();
        if scoreable.len() == anns.len() {
            let all: Vec<f32> = signal[..covered].iter().map(|&v| v as f32).collect();
            assert_eq!(joined, all);
        }
    }
}

#[test]
fn flattened_targets_reproduce_label_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for maxtime in 1..6 {
        let labels: Vec<StageClass> = (0..23).map(|_| StageClass::ALL[rng.gen_range(0..5)]).collect();
        let epochs: Vec<LabeledEpoch> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledEpoch { samples: vec![0.0], label, subject_id: "s".into(), position: i, origin: EpochOrigin::Recorded })
            .collect();
        let seqs = make_sequences(epochs, maxtime).unwrap();
        let flat: Vec<StageClass> = seqs.iter().flat_map(|s| s.targets.iter().filter_map(|t| t.stage())).collect();
        assert_eq!(flat, labels[..seqs.len() * maxtime]);
        for s in &seqs {
            assert_eq!(s.decoder_inputs[0], Symbol::Sod);
            assert_eq!(s.decoder_inputs[1..], s.targets[..maxtime - 1]);
            assert_eq!(*s.targets.last().unwrap(), Symbol::Eod);
        }
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn normalized_epochs_are_standard(x in prop::collection::vec(-1e3f64..1e3, 2..400)) {
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let z = normalize(&x);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() <= 1e-6);
        prop_assert!((sd - 1.0).abs() <= 1e-6);
        let again = normalize(&z);
        for (a, b) in z.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn folds_partition_subjects(n in 1usize..40, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let subjects: Vec<String> = (0..n).map(|i| format!("SC4{i:02}")).collect();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let plan = split_folds(&subjects, k, seed).unwrap();
        prop_assert_eq!(&plan, &split_folds(&subjects, k, seed).unwrap());
        let sizes: Vec<usize> = (0..k).map(|r| plan.test_subjects(r).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for r in 0..k {
            let test: BTreeSet<&str> = plan.test_subjects(r).into_iter().collect();
            let train: BTreeSet<&str> = plan.train_subjects(r).into_iter().collect();
            prop_assert!(test.is_disjoint(&train));
            prop_assert_eq!(test.len() + train.len(), n);
        }
    }
}

fn subject_epochs(rng: &mut impl Rng, subjects: usize, per: usize, dim: usize) -> Vec<LabeledEpoch> {
    let mut out = Vec::new();
    for s in 0..subjects {
        for i in 0..per {
            let label = if rng.gen_bool(0.7) { StageClass::N2 } else { StageClass::ALL[rng.gen_range(0..5)] };
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            out.push(LabeledEpoch {
                samples: normalize(&raw).into_iter().map(|v| v as f32).collect(),
                label,
                subject_id: format!("S{s}"),
                position: i,
                origin: EpochOrigin::Recorded,
            });
        }
    }
    out
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn smote_points_lie_on_parent_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let epochs = subject_epochs(&mut rng, 3, 40, 3000);
    let targets = balanced_targets(&epochs);
    let out = smote_oversample(&epochs, &targets, 5, 3, Execution::Parallel).unwrap();
    assert!(out.n_synthetic > 0);
    for s in out.synthetic() {
        let EpochOrigin::Synthetic { base, neighbor, .. } = s.origin else { panic!("recorded epoch after originals") };
        let (x, y) = (&epochs[base].samples, &epochs[neighbor].samples);
        let gap = dist(&s.samples, x) + dist(&s.samples, y) - dist(x, y);
        assert!(gap.abs() < 1e-6, "collinearity gap {gap}");
        assert_eq!(epochs[base].label, s.label);
        assert_eq!(epochs[neighbor].label, s.label);
    }
    let counts = class_counts(&out.epochs);
    for (class, target) in targets {
        assert_eq!(counts[class.index()], target);
    }
    assert_eq!(out.epochs[..epochs.len()], epochs[..]);
}

#[test]
fn smote_never_touches_test_subjects() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let epochs = subject_epochs(&mut rng, 6, 25, 64);
    let subjects: Vec<&str> = epochs.iter().map(|e| e.subject_id.as_str()).collect();
    let plan = split_folds(&subjects, 3, 7).unwrap();
    for round in 0..3 {
        let (train, test) = plan.partition(&epochs, round);
        let train: Vec<LabeledEpoch> = train.into_iter().cloned().collect();
        let test_subjects: BTreeSet<&str> = test.iter().map(|e| e.subject_id.as_str()).collect();
        let out = smote_oversample(&train, &balanced_targets(&train), 5, round as u64, Execution::Sequential).unwrap();
        assert!(out.n_synthetic > 0);
        for s in out.synthetic() {
            assert!(!test_subjects.contains(s.subject_id.as_str()), "synthetic epoch from test subject {}", s.subject_id);
            assert!(plan.is_train(&s.subject_id, round));
        }
    }
}

#[test]
fn smote_explicit_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut epochs = Vec::new();
    for (label, n) in [(StageClass::W, 100), (StageClass::N1, 10)] {
        for i in 0..n {
            epochs.push(LabeledEpoch {
                samples: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label,
                subject_id: "s".into(),
                position: i,
                origin: EpochOrigin::Recorded,
            });
        }
    }
    let targets = BTreeMap::from([(StageClass::W, 100), (StageClass::N1, 100)]);
    let out = smote_oversample(&epochs, &targets, 5, 0, Execution::Parallel).unwrap();
    assert_eq!(out.n_synthetic, 90);
    assert_eq!(class_counts(&out.epochs)[..2], [100, 100]);
}
