//! Finding PSG / hypnogram pairs.
//!
//! Sleep-EDF names a recording `SC4ssN??-PSG.edf` and its scoring
//! `SC4ssN??-Hypnogram.edf`; the two stems agree on everything but the last
//! character (`SC4001E0` / `SC4001EC`). The subject is the first five
//! characters (`SC400`) when the stem follows that scheme, otherwise the
//! whole stem. A manifest replaces the scan entirely.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

const PSG_SUFFIX: &str = "-PSG.edf";
const HYPNOGRAM_SUFFIX: &str = "-Hypnogram.edf";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingSource {
    pub psg: PathBuf,
    pub hypnogram: PathBuf,
    pub subject_id: String,
    pub recording_id: String,
}

/// `SC4001E0` -> `SC400`; names outside the Sleep-EDF scheme are their own subject.
pub fn subject_of(stem: &str) -> String {
    let b = stem.as_bytes();
    let sleep_edf = b.len() >= 6
        && b[0] == b'S'
        && (b[1] == b'C' || b[1] == b'T')
        && b[2..6].iter().all(u8::is_ascii_digit);
    if sleep_edf {
        stem[..5].to_owned()
    } else {
        stem.to_owned()
    }
}

fn stem_with_suffix<'a>(name: &'a str, suffix: &str) -> Option<&'a str> {
    name.strip_suffix(suffix).filter(|s| !s.is_empty())
}

fn pair_key(stem: &str) -> &str {
    let cut = stem.char_indices().last().map_or(0, |(i, _)| i);
    &stem[..cut]
}

/// Pairs every `*-PSG.edf` in `dir` with its hypnogram. Sorted by recording.
pub fn pair_directory(dir: &Path) -> Result<Vec<RecordingSource>> {
    let entries = fs::read_dir(dir).map_err(CliError::io(dir))?;
    let mut psgs = BTreeMap::new();
    let mut hyps: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(CliError::io(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = stem_with_suffix(&name, PSG_SUFFIX) {
            psgs.insert(stem.to_owned(), entry.path());
        } else if let Some(stem) = stem_with_suffix(&name, HYPNOGRAM_SUFFIX) {
            hyps.entry(pair_key(stem).to_owned()).or_default().push(entry.path());
        }
    }
    if psgs.is_empty() {
        return Err(CliError::Data(format!(
            "no *{PSG_SUFFIX} files in {}; set data.raw_dir (or --raw-dir) to the folder holding the recordings, \
             or list the pairs in a manifest (data.manifest / --manifest)",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(psgs.len());
    let mut problems = Vec::new();
    for (stem, psg) in psgs {
        match hyps.remove(pair_key(&stem)).as_deref() {
            Some([hyp]) => out.push(RecordingSource {
                psg,
                hypnogram: hyp.clone(),
                subject_id: subject_of(&stem),
                recording_id: stem,
            }),
            Some(many) => problems.push(format!("{stem}: {} matching hypnograms", many.len())),
            None => problems.push(format!("{stem}: no {}?{HYPNOGRAM_SUFFIX}", pair_key(&stem))),
        }
    }
    for (key, files) in hyps {
        for f in files {
            problems.push(format!("{}: no {key}?{PSG_SUFFIX}", f.display()));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Data(format!(
            "unpairable files in {}:\n  {}\nrename them to the Sleep-EDF convention or use a manifest",
            dir.display(),
            problems.join("\n  ")
        )));
    }
    Ok(out)
}

/// Reads `psg<TAB>hypnogram<TAB>subject[<TAB>recording]` lines; blank lines
/// and `#` comments are skipped. The recording id defaults to the PSG file
/// stem.
pub fn read_manifest(path: &Path) -> Result<Vec<RecordingSource>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<RecordingSource> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("{} line {}: {m}", path.display(), i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(bad("expected psg<TAB>hypnogram<TAB>subject[<TAB>recording]"));
        }
        let psg = base.join(fields[0].trim());
        let recording_id = match fields.get(3) {
            Some(r) => r.trim().to_owned(),
            None => psg
                .file_name()
                .map(|n| n.to_string_lossy())
                .map(|n| n.strip_suffix(PSG_SUFFIX).or_else(|| n.strip_suffix(".edf")).unwrap_or(&n).to_owned())
                .ok_or_else(|| bad("PSG path has no file name"))?,
        };
        if out.iter().any(|r| r.recording_id == recording_id) {
            return Err(bad(&format!("recording {recording_id} listed twice")));
        }
        out.push(RecordingSource {
            psg,
            hypnogram: base.join(fields[1].trim()),
            subject_id: fields[2].trim().to_owned(),
            recording_id,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("manifest {} lists no recordings", path.display())));
    }
    out.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    Ok(out)
}
