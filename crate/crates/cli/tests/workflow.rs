mod common;

use std::fs;

use common::{ok, prepared_run, s, sleepnet, tree};
use serde_json::Value;
use sleepnet::edf::STAGE_EPOCH_S;
use sleepnet::synth::synthetic_night;

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().skip(1).filter(|l| !l.is_empty()).collect()
}

#[test]
fn prepare_summary_and_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared_run(tmp.path(), "run", 10);
    for f in ["config.toml", "folds.tsv", "data/recordings.tsv", "data/summary.tsv", "data/SC4001E0.slp", "data/SC4021E0.slp"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let folds = fs::read_to_string(run.join("folds.tsv")).unwrap();
    assert_eq!(folds.lines().count(), 3);
    let summary = fs::read_to_string(run.join("data/summary.tsv")).unwrap();
    let mut totals = [0usize; 5];
    for line in data_lines(&summary) {
        let f: Vec<&str> = line.split('\t').collect();
        for (t, v) in totals.iter_mut().zip(&f[3..8]) {
            *t += v.parse::<usize>().unwrap();
        }
    }
    assert_eq!(totals, common::expected_totals());
}

#[test]
fn prepare_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let a = prepared_run(tmp.path(), "a", 10);
    let b = prepared_run(tmp.path(), "b", 10);
    let strip = |t: Vec<(std::path::PathBuf, Vec<u8>)>| t.into_iter().filter(|(p, _)| !p.ends_with("config.toml")).collect::<Vec<_>>();
    assert_eq!(strip(tree(&a)), strip(tree(&b)));
}

#[test]
fn empty_input_directory_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("empty");
    fs::create_dir(&raw).unwrap();
    let out = sleepnet(&["prepare", "--raw-dir", s(&raw), "--run-dir", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no *-PSG.edf files"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(sleepnet(&["prepare", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sleepnet(&["frobnicate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = sleepnet(&["prepare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rat"));
    assert_eq!(sleepnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_channel_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    common::corpus(&tmp.path().join("raw"));
    let out = sleepnet(&[
        "prepare",
        "--raw-dir",
        s(&tmp.path().join("raw")),
        "--run-dir",
        s(&tmp.path().join("run")),
        "--k",
        "3",
        "--channel",
        "EEG C4-A1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("C4-A1"), "{}", stderr(&out));
}

#[test]
fn train_evaluate_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared_run(tmp.path(), "run", 12);
    ok(&["train", "--run-dir", s(&run)]);
    for fold in 0..3 {
        let log = fs::read_to_string(run.join(format!("logs/fold-{fold:02}.train.jsonl"))).unwrap();
        let steps: Vec<u64> = log
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap())
            .filter(|v| v["kind"] == "step")
            .map(|v| v["step"].as_u64().unwrap())
            .collect();
        assert_eq!(steps, vec![5, 10]);
        assert!(!log.contains("wall"));
        let timing = fs::read_to_string(run.join(format!("logs/fold-{fold:02}.timing.jsonl"))).unwrap();
        assert_eq!(timing.lines().count(), 2);
        assert!(run.join(format!("checkpoints/fold-{fold:02}/final.ckpt")).is_file());
    }
    assert!(run.join("checkpoints/model.toml").is_file());

    let out = ok(&["evaluate", "--run-dir", s(&run)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("kappa"));
    let report: Value = serde_json::from_str(&fs::read_to_string(run.join("reports/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "sleepnet.metrics.v1");
    assert_eq!(report["k"], 3);
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    for key in ["confusion", "per_class", "overall"] {
        assert!(report["pooled"].get(key).is_some(), "pooled.{key} missing");
    }
    let pooled_total: u64 =
        report["pooled"]["confusion"]["counts"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    let total_epochs: usize = common::expected_totals().iter().sum();
    assert_eq!(pooled_total as usize, total_epochs);
    let fold_sum: u64 = report["folds"].as_array().unwrap().iter().map(|f| f["epochs"].as_u64().unwrap()).sum();
    assert_eq!(fold_sum, pooled_total);
    let predictions = fs::read_to_string(run.join("reports/predictions.tsv")).unwrap();
    assert_eq!(data_lines(&predictions).len(), total_epochs);
    assert!(run.join("reports/metrics.txt").is_file());
    assert_eq!(fs::read_to_string(run.join("reports/confusion.tsv")).unwrap().lines().count(), 6);

    ok(&["export-attention", "--run-dir", s(&run), "--recording", "SC4011E0"]);
    let dir = run.join("attention/SC4011E0");
    let hyp = fs::read_to_string(dir.join("hypnogram.tsv")).unwrap();
    assert!(hyp.starts_with("epoch\tonset_s\tpredicted\texpert\n"));
    let windows = fs::read_to_string(dir.join("attention/windows.tsv")).unwrap();
    assert!(data_lines(&windows).len() >= 7);
    check_attention_file(&dir.join("attention/window-0000.tsv"), 4);
}

fn check_attention_file(path: &std::path::Path, maxtime: usize) {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), maxtime + 1);
    for row in &rows[1..] {
        let w: Vec<f64> = row.split('\t').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(w.len(), maxtime);
        assert!(w.iter().all(|&a| a >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{row}");
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let full = prepared_run(tmp.path(), "full", 23);
    ok(&["train", "--run-dir", s(&full), "--fold", "1"]);

    let split = prepared_run(tmp.path(), "split", 23);
    ok(&["train", "--run-dir", s(&split), "--fold", "1", "--max-steps", "9", "--checkpoint-every-epochs", "1"]);
    ok(&["train", "--run-dir", s(&split), "--fold", "1", "--max-steps", "23", "--checkpoint-every-epochs", "2", "--resume"]);

    let log = |run: &std::path::Path| fs::read_to_string(run.join("logs/fold-01.train.jsonl")).unwrap();
    assert_eq!(log(&full), log(&split));
    let ckpt = |run: &std::path::Path| fs::read(run.join("checkpoints/fold-01/final.ckpt")).unwrap();
    assert_eq!(ckpt(&full), ckpt(&split));
}

#[test]
fn fold_checkpoint_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared_run(tmp.path(), "run", 2);
    ok(&["train", "--run-dir", s(&run)]);
    fs::copy(run.join("checkpoints/fold-00/final.ckpt"), run.join("checkpoints/fold-02/final.ckpt")).unwrap();
    let out = sleepnet(&["evaluate", "--run-dir", s(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));

    fs::remove_file(run.join("checkpoints/fold-02/final.ckpt")).unwrap();
    let out = sleepnet(&["evaluate", "--run-dir", s(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fold 2 has no checkpoint"), "{}", stderr(&out));
    ok(&["evaluate", "--run-dir", s(&run), "--fold", "0", "--fold", "1"]);
}

#[test]
fn diverging_loss_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared_run(tmp.path(), "run", 20);
    let out = sleepnet(&["train", "--run-dir", s(&run), "--fold", "0", "--learning-rate", "1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
    let log = fs::read_to_string(run.join("logs/fold-00.train.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains("\"kind\":\"abort\""));
}

#[test]
fn score_single_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prepared_run(tmp.path(), "run", 6);
    ok(&["train", "--run-dir", s(&run), "--fold", "0"]);
    let ckpt = run.join("checkpoints/fold-00/final.ckpt");
    let night = synthetic_night(13, common::rate(), 2, 99).unwrap();
    let psg = tmp.path().join("night-PSG.edf");
    let hyp = tmp.path().join("night-Hypnogram.edf");
    fs::write(&psg, night.psg.to_bytes()).unwrap();
    fs::write(&hyp, night.hypnogram.to_bytes()).unwrap();

    let out_plain = tmp.path().join("plain");
    ok(&["score", "--psg", s(&psg), "--checkpoint", s(&ckpt), "--out", s(&out_plain)]);
    let text = fs::read_to_string(out_plain.join("hypnogram.tsv")).unwrap();
    assert_eq!(data_lines(&text).len(), 13);
    assert!(text.starts_with("epoch\tonset_s\tpredicted\n"));
    let onsets: Vec<f64> = data_lines(&text).iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(onsets[3], 3.0 * STAGE_EPOCH_S);
    assert!(!out_plain.join("agreement.json").exists());
    assert!(out_plain.join("config.toml").is_file());

    let out_hyp = tmp.path().join("overlay");
    ok(&["score", "--psg", s(&psg), "--hypnogram", s(&hyp), "--checkpoint", s(&ckpt), "--out", s(&out_hyp)]);
    let scoreable = night.stages[..13].iter().filter(|r| sleepnet::pipeline::StageClass::from_raw(**r).is_some()).count();
    let text = fs::read_to_string(out_hyp.join("hypnogram.tsv")).unwrap();
    assert_eq!(data_lines(&text).len(), scoreable);
    let agreement: Value = serde_json::from_str(&fs::read_to_string(out_hyp.join("agreement.json")).unwrap()).unwrap();
    assert_eq!(agreement["epochs"].as_u64().unwrap() as usize, scoreable);
    let pct = agreement["agreement_percent"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&pct));
    let windows = fs::read_to_string(out_hyp.join("attention/windows.tsv")).unwrap();
    for line in data_lines(&windows) {
        check_attention_file(&out_hyp.join("attention").join(line.split('\t').nth(3).unwrap()), 4);
    }

    let out = sleepnet(&["score", "--psg", s(&psg), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("x")), "--channel", "EMG submental"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("EMG submental"), "{}", stderr(&out));
}
