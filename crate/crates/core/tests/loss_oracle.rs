use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepnet::compute::{gradient_check, Graph, Mode, Tensor};
use sleepnet::loss::{loss_graph, mfe, mse, msfe, one_hot, per_class_error, LossKind};

const C: usize = 6;

/// Groups rows by class with a map and averages the squared errors in a
/// plain double loop; shares no code with the library.
fn oracle(probs: &[Vec<f64>], targets: &[usize]) -> (f64, f64) {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (p, &t) in probs.iter().zip(targets) {
        let mut e = 0.0;
        for (j, &pj) in p.iter().enumerate() {
            let y = if j == t { 1.0 } else { 0.0 };
            e += (y - pj) * (y - pj);
        }
        groups.entry(t).or_default().push(e / p.len() as f64);
    }
    let l: Vec<f64> = groups.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    (l.iter().sum(), l.iter().map(|x| x * x).sum())
}

fn random_batch(rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.gen_range(1..40);
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..C).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
            let s: f64 = raw.iter().sum::<f64>() + 1e-12;
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    let targets = (0..n).map(|_| rng.gen_range(0..C)).collect();
    (probs, targets)
}

#[test]
fn mfe_msfe_match_grouping_oracle() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, targets) = random_batch(&mut rng);
        let flat: Vec<f64> = probs.concat();
        let e = per_class_error(&flat, &one_hot(&targets, C), C, &targets, C).unwrap();
        let (o_mfe, o_msfe) = oracle(&probs, &targets);
        assert!((mfe(&e) - o_mfe).abs() < 1e-8, "seed {seed}");
        assert!((msfe(&e) - o_msfe).abs() < 1e-8, "seed {seed}");

        let mut g = Graph::detached(Mode::Inference);
        let p = g.constant(Tensor::new(vec![targets.len(), C], flat.clone()).unwrap());
        let groups: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
        let lm = loss_graph(&mut g, LossKind::Mfe, p, &targets, &groups, C).unwrap();
        let ls = loss_graph(&mut g, LossKind::Msfe, p, &targets, &groups, C).unwrap();
        assert!((g.value(lm)[0] - o_mfe).abs() < 1e-8);
        assert!((g.value(ls)[0] - o_msfe).abs() < 1e-8);
    }
}

#[test]
fn duplicating_a_class_keeps_loss() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut probs, mut targets) = random_batch(&mut rng);
        let before = oracle(&probs, &targets);
        let e0 = per_class_error(&probs.concat(), &one_hot(&targets, C), C, &targets, C).unwrap();
        let class = targets[0];
        let dup: Vec<(Vec<f64>, usize)> = probs.iter().cloned().zip(targets.iter().copied()).filter(|(_, t)| *t == class).collect();
        for _ in 0..rng.gen_range(1..4) {
            for (p, t) in &dup {
                probs.push(p.clone());
                targets.push(*t);
            }
        }
        let e1 = per_class_error(&probs.concat(), &one_hot(&targets, C), C, &targets, C).unwrap();
        assert!((mfe(&e1) - mfe(&e0)).abs() < 1e-8);
        assert!((msfe(&e1) - msfe(&e0)).abs() < 1e-8);
        assert!((mfe(&e1) - before.0).abs() < 1e-8);
    }
}

#[test]
fn absent_classes_contribute_zero() {
    let probs = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0];
    let e = per_class_error(&probs, &one_hot(&[0], C), C, &[0], C).unwrap();
    assert_eq!(e.counts, vec![1, 0, 0, 0, 0, 0]);
    assert!(e.errors[1..].iter().all(|&l| l == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cauchy_schwarz_between_mfe_and_msfe(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, targets) = random_batch(&mut rng);
        let e = per_class_error(&probs.concat(), &one_hot(&targets, C), C, &targets, C).unwrap();
        let present = e.counts.iter().filter(|&&n| n > 0).count() as f64;
        let (a, b) = (mfe(&e), msfe(&e));
        prop_assert!(b <= a * a + 1e-12);
        prop_assert!(a * a <= present * b + 1e-12);
        prop_assert!(a * a <= C as f64 * b + 1e-12);
    }

    #[test]
    fn mse_is_count_weighted_class_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, targets) = random_batch(&mut rng);
        let flat = probs.concat();
        let y = one_hot(&targets, C);
        let e = per_class_error(&flat, &y, C, &targets, C).unwrap();
        let total = targets.len() as f64;
        let weighted: f64 = e.errors.iter().zip(&e.counts).map(|(l, &n)| n as f64 / total * l).sum();
        prop_assert!((mse(&flat, &y, C).unwrap() - weighted).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_have_zero_loss(targets in prop::collection::vec(0..C, 1..30)) {
        let y = one_hot(&targets, C);
        let e = per_class_error(&y, &y, C, &targets, C).unwrap();
        prop_assert_eq!(mfe(&e), 0.0);
        prop_assert_eq!(msfe(&e), 0.0);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for kind in [LossKind::Mfe, LossKind::Msfe, LossKind::Mse] {
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // probabilities bounded away from 0 so no coordinate has a
            // vanishing gradient that roundoff would dominate
            let (_, targets) = random_batch(&mut rng);
            let n = targets.len();
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..C).map(|_| rng.gen_range(0.1..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect();
            let groups: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
            let eval = |x: &[f64], grad: bool| {
                let mut g = Graph::detached(Mode::Inference);
                let p = g.variable(Tensor::new(vec![n, C], x.to_vec()).unwrap());
                let l = loss_graph(&mut g, kind, p, &targets, &groups, C).unwrap();
                let v = g.value(l)[0];
                if grad {
                    g.backward(l).unwrap();
                    return (v, g.grad(p).unwrap().to_vec());
                }
                (v, Vec::new())
            };
            let point = probs.concat();
            let (_, analytic) = eval(&point, true);
            let report = gradient_check(|x| Ok(eval(x, false).0), &point, &analytic, 1e-6).unwrap();
            worst = worst.max(report.max_relative_error);
        }
        println!("{kind:?}: worst relative error {worst:.2e}");
        assert!(worst < 1e-5, "{kind:?} {worst}");
    }
}
