use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepnet::compute::gradient_check;
use sleepnet::network::{Model, ModelConfig};
use sleepnet::par::Execution;
use sleepnet::pipeline::{make_sequences, EpochOrigin, EpochSequence, LabeledEpoch, StageClass};
use sleepnet::training::{batch_gradients, TrainConfig};

fn sequences(cfg: &ModelConfig, n_seq: usize, seed: u64) -> Vec<EpochSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = (0..n_seq * cfg.maxtime)
        .map(|i| LabeledEpoch {
            samples: (0..cfg.epoch_samples).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            label: StageClass::ALL[rng.gen_range(0..5)],
            subject_id: "s".into(),
            position: i,
            origin: EpochOrigin::Recorded,
        })
        .collect();
    make_sequences(epochs, cfg.maxtime).unwrap()
}

/// Moves every parameter (zero-initialized biases included) off the exact
/// ReLU and max-pool ties that a fresh initialization sits on.
fn jitter(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let flat: Vec<f64> = model.params().flatten().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
    model.params_mut().assign_flat(&flat).unwrap();
}

#[test]
fn end_to_end_mfe_l2() {
    let cfg = ModelConfig::tiny();
    let train = TrainConfig { execution: Execution::Sequential, ..TrainConfig::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut model = Model::new(cfg.clone(), seed).unwrap();
        jitter(&mut model, seed);
        let seqs = sequences(&cfg, 2, 100 + seed);
        let batch: Vec<_> = seqs.iter().collect();
        let r = batch_gradients(&model, &batch, &train, seed).unwrap();
        let point = model.params().flatten();
        let mut probe = model.clone();
        let report = gradient_check(
            |x| {
                probe.params_mut().assign_flat(x).unwrap();
                Ok(batch_gradients(&probe, &batch, &train, seed).unwrap().loss)
            },
            &point,
            &r.gradients.flatten(),
            1e-5,
        )
        .unwrap();
        println!("seed {seed}: max rel {:.3e} at {:?}, checked {}, skipped {}", report.max_relative_error, report.worst_index, report.checked, report.skipped.len());
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst < 1e-3, "worst {worst}");
}
