use std::fmt::Write as _;
use std::fs;

use sleepnet::par;
use sleepnet::pipeline::{class_counts, prepare_recording, split_folds, PrepareSummary, PreparedRecording, StageClass, N_STAGES};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{create_dir, write_file, RunLayout};
use crate::pairing::{pair_directory, read_manifest, RecordingSource};

pub struct PrepareOutcome {
    pub recordings: Vec<(PreparedRecording, PrepareSummary)>,
    pub totals: [usize; N_STAGES],
    pub table: String,
}

/// Every recording to normalized epochs, a summary and a subject-wise fold plan.
pub fn run(config: &RunConfig) -> Result<PrepareOutcome> {
    let layout = RunLayout::new(&config.output_dir);
    let sources = match &config.data.manifest {
        Some(m) => read_manifest(m)?,
        None => pair_directory(&config.data.raw_dir)?,
    };
    let options = config.prepare_options();
    let prepared = par::map_slice(config.execution(), &sources, |src| prepare_one(src, &options));
    let recordings: Vec<_> = prepared.into_iter().collect::<Result<_>>()?;

    let subjects: Vec<&str> = recordings.iter().map(|(r, _)| r.subject_id.as_str()).collect();
    let k = config.k();
    let plan = split_folds(&subjects, k, config.seed).map_err(|e| {
        CliError::Data(format!("{e}; set k (or --k) to at most the number of distinct subjects"))
    })?;

    create_dir(&layout.data_dir())?;
    let mut index = String::from("recording\tsubject\tfile\n");
    for (rec, _) in &recordings {
        let path = layout.recording_file(&rec.recording_id);
        rec.write(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let _ = writeln!(index, "{}\t{}\t{}.slp", rec.recording_id, rec.subject_id, rec.recording_id);
    }
    write_file(&layout.recordings_index(), index)?;
    let (summary, totals) = summary_tsv(&recordings);
    write_file(&layout.summary(), &summary)?;
    write_file(&layout.folds(), plan.to_tsv())?;
    write_file(&layout.config(), config.to_toml())?;

    let table = summary_table(&recordings, &totals);
    Ok(PrepareOutcome { recordings, totals, table })
}

fn prepare_one(src: &RecordingSource, options: &sleepnet::pipeline::PrepareOptions) -> Result<(PreparedRecording, PrepareSummary)> {
    let psg = fs::read(&src.psg).map_err(CliError::io(&src.psg))?;
    let hyp = fs::read(&src.hypnogram).map_err(CliError::io(&src.hypnogram))?;
    prepare_recording(&psg, &hyp, &src.subject_id, &src.recording_id, options)
        .map_err(|e| CliError::Data(format!("{} ({}): {e}", src.recording_id, src.psg.display())))
}

fn summary_tsv(recordings: &[(PreparedRecording, PrepareSummary)]) -> (String, [usize; N_STAGES]) {
    let mut s = String::from("recording\tsubject\tchannel");
    for c in StageClass::ALL {
        let _ = write!(s, "\t{c}");
    }
    s.push_str("\ttotal\tdropped_beyond_signal\texcluded_unscored\ttrimmed_wake\n");
    let mut totals = [0; N_STAGES];
    for (rec, sum) in recordings {
        let counts = class_counts(&rec.epochs);
        let _ = write!(s, "{}\t{}\t{}", rec.recording_id, rec.subject_id, sum.channel);
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
            let _ = write!(s, "\t{c}");
        }
        let _ = writeln!(s, "\t{}\t{}\t{}\t{}", sum.kept, sum.dropped_beyond_signal, sum.excluded_unscored, sum.trimmed_wake);
    }
    (s, totals)
}

fn summary_table(recordings: &[(PreparedRecording, PrepareSummary)], totals: &[usize; N_STAGES]) -> String {
    let mut s = format!("{:<12}", "recording");
    for c in StageClass::ALL {
        let _ = write!(s, "{:>8}", c.name());
    }
    let _ = writeln!(s, "{:>8}", "total");
    for (rec, _) in recordings {
        let _ = write!(s, "{:<12}", rec.recording_id);
        for c in class_counts(&rec.epochs) {
            let _ = write!(s, "{c:>8}");
        }
        let _ = writeln!(s, "{:>8}", rec.epochs.len());
    }
    let _ = write!(s, "{:<12}", "total");
    for c in totals {
        let _ = write!(s, "{c:>8}");
    }
    let _ = writeln!(s, "{:>8}", totals.iter().sum::<usize>());
    s
}
