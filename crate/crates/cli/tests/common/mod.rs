#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sleepnet::edf::STAGE_EPOCH_S;
use sleepnet::network::ModelConfig;
use sleepnet::pipeline::{StageClass, N_STAGES};
use sleepnet::synth::{synthetic_night, write_corpus};

pub const SUBJECTS: usize = 3;
pub const BASE_EPOCHS: usize = 24;
pub const EPOCH_SAMPLES: usize = 64;
pub const CORPUS_SEED: u64 = 21;

pub fn rate() -> f64 {
    EPOCH_SAMPLES as f64 / STAGE_EPOCH_S
}

pub fn corpus(dir: &Path) -> Vec<(PathBuf, PathBuf)> {
    write_corpus(dir, SUBJECTS, BASE_EPOCHS, rate(), CORPUS_SEED).unwrap()
}

/// Class totals the corpus should prepare to, counted from the generator's
/// own stage sequences: recorded epochs only, movement and unscored dropped.
pub fn expected_totals() -> [usize; N_STAGES] {
    let mut totals = [0; N_STAGES];
    for s in 0..SUBJECTS {
        let n = BASE_EPOCHS + 4 * s;
        let night = synthetic_night(n, rate(), s % 2, CORPUS_SEED + s as u64).unwrap();
        for raw in &night.stages[..n] {
            if let Some(c) = StageClass::from_raw(*raw) {
                totals[c.index()] += 1;
            }
        }
    }
    totals
}

pub fn model() -> ModelConfig {
    ModelConfig { epoch_samples: EPOCH_SAMPLES, maxtime: 4, ..ModelConfig::tiny() }
}

/// A single-threaded configuration for the synthetic corpus.
pub fn config_toml(raw_dir: &Path, run_dir: &Path, max_steps: u64) -> String {
    let mut c = sleepnet_cli::RunConfig { seed: 5, output_dir: run_dir.into(), threads: Some(1), k: Some(3), ..Default::default() };
    c.data.raw_dir = raw_dir.into();
    c.model = model();
    c.train.learning_rate = 3e-3;
    c.train.batch_size = 4;
    c.train.max_steps = Some(max_steps);
    c.train.log_every_steps = 5;
    c.train.checkpoint_every_epochs = 2;
    c.train.validate_every_epochs = 2;
    c.to_toml()
}

pub fn sleepnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleepnet")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = sleepnet(args);
    assert!(
        out.status.success(),
        "sleepnet {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, relative path and bytes, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// A prepared run directory with its config, ready for `train`.
pub fn prepared_run(root: &Path, name: &str, max_steps: u64) -> PathBuf {
    let raw = root.join("raw");
    if !raw.exists() {
        corpus(&raw);
    }
    let run = root.join(name);
    let cfg = root.join(format!("{name}.toml"));
    std::fs::write(&cfg, config_toml(&raw, &run, max_steps)).unwrap();
    ok(&["prepare", "--config", s(&cfg)]);
    run
}
