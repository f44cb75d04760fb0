//! Synthetic recordings: EDF+ hypnogram encoding and stage-dependent EEG-like
//! signals laid out like the Sleep-EDF cassette files. Used for fixtures,
//! tests and benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::edf::{EdfError, EdfRecording, RawStage, SignalData, SignalHeader, StageAnnotation, ANNOTATION_LABEL, STAGE_EPOCH_S};
use crate::pipeline::{normalize, EpochOrigin, LabeledEpoch, StageClass};

const TAL_DURATION: u8 = 0x15;
const TAL_TEXT: u8 = 0x14;

fn stamp(v: f64, signed: bool) -> String {
    let body = if v.fract() == 0.0 { format!("{}", v.abs() as u64) } else { format!("{}", v.abs()) };
    match (signed, v < 0.0) {
        (true, true) => format!("-{body}"),
        (true, false) => format!("+{body}"),
        _ => body,
    }
}

/// One timestamped annotation list: `+onset[\x15duration]\x14text\x14...\x00`.
pub fn encode_tal(onset_s: f64, duration_s: Option<f64>, texts: &[&str]) -> Vec<u8> {
    let mut out = stamp(onset_s, true).into_bytes();
    if let Some(d) = duration_s {
        out.push(TAL_DURATION);
        out.extend(stamp(d, false).bytes());
    }
    out.push(TAL_TEXT);
    if texts.is_empty() {
        out.push(TAL_TEXT);
    }
    for t in texts {
        out.extend_from_slice(t.as_bytes());
        out.push(TAL_TEXT);
    }
    out.push(0);
    out
}

fn start_time() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(1989, 4, 24).and_then(|d| d.and_hms_opt(16, 13, 0)).expect("valid date")
}

/// An EDF+ file whose only signal carries the given annotations in a single
/// data record, preceded by the record's time-keeping TAL.
pub fn hypnogram_edf(
    stages: &[StageAnnotation],
    events: &[(f64, Option<f64>, &str)],
    duration_s: f64,
) -> Result<EdfRecording, EdfError> {
    let mut block = encode_tal(0.0, None, &[]);
    let mut all: Vec<(f64, Option<f64>, &str)> = stages
        .iter()
        .map(|s| (s.onset_s, Some(s.duration_s), s.label.annotation_text()))
        .chain(events.iter().copied())
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (onset, dur, text) in all {
        block.extend(encode_tal(onset, dur, &[text]));
    }
    if block.len() % 2 == 1 {
        block.push(0);
    }
    let header = SignalHeader {
        label: ANNOTATION_LABEL.into(),
        transducer: String::new(),
        physical_dim: String::new(),
        physical_min: -1.0,
        physical_max: 1.0,
        digital_min: -32768,
        digital_max: 32767,
        prefiltering: String::new(),
        samples_per_record: block.len() / 2,
        reserved: String::new(),
    };
    let digital = block.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    EdfRecording::from_signals(
        "X X X X",
        "Startdate X X X X",
        start_time(),
        "EDF+C",
        duration_s.max(1.0),
        vec![SignalData { header, digital }],
    )
}

/// Collapses per-epoch stages into run-length annotations as the Sleep-EDF
/// hypnograms store them.
pub fn stage_runs(stages: &[RawStage]) -> Vec<StageAnnotation> {
    let mut out: Vec<StageAnnotation> = Vec::new();
    for (i, &label) in stages.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.label == label => last.duration_s += STAGE_EPOCH_S,
            _ => out.push(StageAnnotation { onset_s: i as f64 * STAGE_EPOCH_S, duration_s: STAGE_EPOCH_S, label }),
        }
    }
    out
}

/// A plausible night: wake at both ends, cycling through light, deep and
/// REM sleep, with occasional movement and unscored epochs.
pub fn stage_sequence(n_epochs: usize, rng: &mut impl Rng) -> Vec<RawStage> {
    use RawStage::*;
    let cycle = [S1, S2, S2, S3, S4, S3, S2, R, R];
    let mut out = Vec::with_capacity(n_epochs);
    let edge = (n_epochs / 8).max(1);
    let mut phase = 0;
    while out.len() < n_epochs {
        let i = out.len();
        let stage = if i < edge || i + edge >= n_epochs {
            W
        } else if rng.gen_bool(0.03) {
            if rng.gen_bool(0.5) {
                M
            } else {
                Unknown
            }
        } else {
            if rng.gen_bool(0.35) {
                phase = (phase + 1) % cycle.len();
            }
            cycle[phase]
        };
        out.push(stage);
    }
    out
}

fn stage_wave(stage: RawStage) -> &'static [(f64, f64)] {
    // (frequency Hz, amplitude uV)
    match stage {
        RawStage::W => &[(10.0, 20.0), (21.0, 8.0)],
        RawStage::S1 => &[(5.5, 25.0), (9.0, 6.0)],
        RawStage::S2 => &[(13.0, 18.0), (3.5, 35.0)],
        RawStage::S3 => &[(1.5, 60.0), (3.0, 20.0)],
        RawStage::S4 => &[(0.8, 90.0), (2.0, 25.0)],
        RawStage::R => &[(6.5, 22.0), (2.5, 15.0)],
        RawStage::M => &[(0.3, 150.0)],
        RawStage::Unknown => &[(1.0, 5.0)],
    }
}

/// `rate`-Hz signal with one 30-s window per stage.
pub fn stage_signal(stages: &[RawStage], rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let spe = (rate * STAGE_EPOCH_S).round() as usize;
    let mut out = Vec::with_capacity(stages.len() * spe);
    for &s in stages {
        let comps: Vec<(f64, f64, f64)> = stage_wave(s).iter().map(|&(f, a)| (f, a, rng.gen_range(0.0..std::f64::consts::TAU))).collect();
        for t in 0..spe {
            let time = t as f64 / rate;
            let clean: f64 = comps.iter().map(|(f, a, ph)| a * (std::f64::consts::TAU * f * time + ph).sin()).sum();
            out.push(clean + rng.gen_range(-6.0..6.0));
        }
    }
    out
}

fn eeg_header(label: &str, spr: usize) -> SignalHeader {
    SignalHeader {
        label: label.into(),
        transducer: "Ag-AgCl electrodes".into(),
        physical_dim: "uV".into(),
        physical_min: -500.0,
        physical_max: 500.0,
        digital_min: -2048,
        digital_max: 2047,
        prefiltering: "HP:0.5Hz LP:100Hz".into(),
        samples_per_record: spr,
        reserved: String::new(),
    }
}

/// A synthetic night: a PSG with two EEG derivations and an EOG channel at
/// `rate` Hz in 30-s records, and its hypnogram. The hypnogram may run
/// `overhang_epochs` past the end of the signal.
#[derive(Debug, Clone)]
pub struct SyntheticNight {
    pub stages: Vec<RawStage>,
    pub psg: EdfRecording,
    pub hypnogram: EdfRecording,
}

pub fn synthetic_night(n_epochs: usize, rate: f64, overhang_epochs: usize, seed: u64) -> Result<SyntheticNight, EdfError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = stage_sequence(n_epochs + overhang_epochs, &mut rng);
    let recorded = &stages[..n_epochs];
    let spr = (rate * STAGE_EPOCH_S).round() as usize;
    let mut signals = Vec::new();
    for label in ["EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal"] {
        let x = stage_signal(recorded, rate, &mut rng);
        signals.push(SignalData::from_physical(eeg_header(label, spr), &x));
    }
    let psg = EdfRecording::from_signals("X F X Female_33yr", "Startdate 24-APR-1989 X X X", start_time(), "", STAGE_EPOCH_S, signals)?;
    let runs = stage_runs(&stages);
    let events = [(0.0, None, "Lights off")];
    let hypnogram = hypnogram_edf(&runs, &events, stages.len() as f64 * STAGE_EPOCH_S)?;
    Ok(SyntheticNight { stages, psg, hypnogram })
}

/// Writes `n_subjects` nights as `SC4<ss>1E0-PSG.edf` /
/// `SC4<ss>1EC-Hypnogram.edf` pairs into `dir` and returns the pairs. Night
/// `s` has `n_epochs + 4 * s` recorded epochs; odd nights carry one
/// hypnogram epoch past the end of the signal.
pub fn write_corpus(
    dir: &Path,
    n_subjects: usize,
    n_epochs: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<(PathBuf, PathBuf)>, EdfError> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let night = synthetic_night(n_epochs + s * 4, rate, s % 2, seed.wrapping_add(s as u64))?;
        let psg = dir.join(format!("SC4{s:02}1E0-PSG.edf"));
        let hyp = dir.join(format!("SC4{s:02}1EC-Hypnogram.edf"));
        fs::write(&psg, night.psg.to_bytes())?;
        fs::write(&hyp, night.hypnogram.to_bytes())?;
        out.push((psg, hyp));
    }
    Ok(out)
}

/// A small two-class epoch set for overfitting checks: W epochs oscillate
/// fast, N2 epochs slowly, both with additive noise; the label switches
/// between consecutive epochs with probability 0.3. Samples are normalized.
pub fn two_class_epochs(n_epochs: usize, epoch_samples: usize, seed: u64) -> Vec<LabeledEpoch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label = StageClass::W;
    (0..n_epochs)
        .map(|position| {
            if position > 0 && rng.gen_bool(0.3) {
                label = if label == StageClass::W { StageClass::N2 } else { StageClass::W };
            }
            let freq = if label == StageClass::W { 0.35 } else { 0.06 };
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let raw: Vec<f64> =
                (0..epoch_samples).map(|t| (freq * t as f64 + phase).sin() + rng.gen_range(-0.3..0.3)).collect();
            LabeledEpoch {
                samples: normalize(&raw).into_iter().map(|v| v as f32).collect(),
                label,
                subject_id: "toy".into(),
                position,
                origin: EpochOrigin::Recorded,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf::{parse_edf, parse_hypnogram, parse_tals};

    #[test]
    fn tal_bytes() {
        assert_eq!(encode_tal(0.0, Some(30.0), &["Sleep stage W"]), b"+0\x1530\x14Sleep stage W\x14\x00".to_vec());
        assert_eq!(encode_tal(12.5, None, &[]), b"+12.5\x14\x14\x00".to_vec());
        let parsed = parse_tals(&encode_tal(30.0, Some(60.0), &["Sleep stage 1"])).unwrap();
        assert_eq!(parsed[0].onset_s, 30.0);
        assert_eq!(parsed[0].duration_s, Some(60.0));
    }

    #[test]
    fn runs_collapse() {
        use RawStage::*;
        let r = stage_runs(&[W, W, S1, S1, S1, W]);
        assert_eq!(r.len(), 3);
        assert_eq!((r[1].onset_s, r[1].duration_s), (60.0, 90.0));
    }

    #[test]
    fn night_parses_back() {
        let night = synthetic_night(40, 100.0, 2, 5).unwrap();
        let psg = parse_edf(&night.psg.to_bytes()).unwrap();
        assert_eq!(psg.header.n_data_records, 40);
        let ch = psg.select_channel("EEG Fpz-Cz").unwrap();
        assert_eq!(ch.samples.len(), 40 * 3000);
        let hyp = parse_hypnogram(&night.hypnogram.to_bytes()).unwrap();
        assert_eq!(hyp.ignored, 1);
        let total: usize = hyp.stages.iter().map(|s| s.n_epochs()).sum();
        assert_eq!(total, 42);
    }

    #[test]
    fn low_rate_night_has_short_epochs() {
        let night = synthetic_night(6, 64.0 / STAGE_EPOCH_S, 0, 2).unwrap();
        let psg = parse_edf(&night.psg.to_bytes()).unwrap();
        let ch = psg.select_channel("EEG Fpz-Cz").unwrap();
        assert_eq!(ch.samples.len(), 6 * 64);
        assert!((ch.sampling_rate * STAGE_EPOCH_S - 64.0).abs() < 1e-9);
    }
}
