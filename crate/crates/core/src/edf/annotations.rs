//! EDF+ time-stamped annotation lists (TALs) and sleep-stage hypnograms.
//!
//! A TAL is `+onset[\x15duration]\x14text\x14[text\x14...]\x00`. The first TAL
//! of every data record is a time-keeping entry with no text.

use serde::{Deserialize, Serialize};

use super::recording::parse_edf;
use super::EdfError;

const DURATION_SEP: u8 = 0x15;
const TEXT_SEP: u8 = 0x14;
const TAL_END: u8 = 0x00;

/// Scoring epoch length used by stage annotations.
pub const STAGE_EPOCH_S: f64 = 30.0;

/// A raw annotation as stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub text: String,
}

/// Rechtschaffen & Kales stage as written by the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawStage {
    W,
    S1,
    S2,
    S3,
    S4,
    R,
    /// Movement time.
    M,
    /// Not scored.
    Unknown,
}

impl RawStage {
    /// Maps the Sleep-EDF annotation strings. Anything else is not a stage.
    pub fn from_annotation(text: &str) -> Option<Self> {
        Some(match text {
            "Sleep stage W" => Self::W,
            "Sleep stage 1" => Self::S1,
            "Sleep stage 2" => Self::S2,
            "Sleep stage 3" => Self::S3,
            "Sleep stage 4" => Self::S4,
            "Sleep stage R" => Self::R,
            "Movement time" => Self::M,
            "Sleep stage ?" => Self::Unknown,
            _ => return None,
        })
    }

    pub fn annotation_text(self) -> &'static str {
        match self {
            Self::W => "Sleep stage W",
            Self::S1 => "Sleep stage 1",
            Self::S2 => "Sleep stage 2",
            Self::S3 => "Sleep stage 3",
            Self::S4 => "Sleep stage 4",
            Self::R => "Sleep stage R",
            Self::M => "Movement time",
            Self::Unknown => "Sleep stage ?",
        }
    }

    /// Short form: one of `W 1 2 3 4 R M ?`.
    pub fn code(self) -> char {
        match self {
            Self::W => 'W',
            Self::S1 => '1',
            Self::S2 => '2',
            Self::S3 => '3',
            Self::S4 => '4',
            Self::R => 'R',
            Self::M => 'M',
            Self::Unknown => '?',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageAnnotation {
    pub onset_s: f64,
    pub duration_s: f64,
    pub label: RawStage,
}

impl StageAnnotation {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    /// Number of 30-s scoring epochs covered.
    pub fn n_epochs(&self) -> usize {
        (self.duration_s / STAGE_EPOCH_S).round() as usize
    }
}

/// Stage annotations of one night, plus how many non-stage annotation texts
/// were skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hypnogram {
    pub stages: Vec<StageAnnotation>,
    pub ignored: usize,
}

/// Parses every TAL in one annotation-signal block.
pub fn parse_tals(block: &[u8]) -> Result<Vec<Annotation>, EdfError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for tal in block.split(|&b| b == TAL_END) {
        let here = offset;
        offset += tal.len() + 1;
        if tal.is_empty() {
            continue;
        }
        let malformed = |reason: &str| EdfError::MalformedAnnotation { offset: here, reason: reason.to_owned() };
        let mut fields = tal.split(|&b| b == TEXT_SEP);
        let stamp = fields.next().ok_or_else(|| malformed("missing time stamp"))?;
        if tal.last() != Some(&TEXT_SEP) {
            return Err(malformed("annotation list not terminated by 0x14"));
        }
        let (onset_raw, duration_raw) = match stamp.iter().position(|&b| b == DURATION_SEP) {
            Some(p) => (&stamp[..p], Some(&stamp[p + 1..])),
            None => (stamp, None),
        };
        let onset = parse_stamp(onset_raw, true).ok_or_else(|| malformed("bad onset"))?;
        let duration = match duration_raw {
            Some(d) => Some(parse_stamp(d, false).ok_or_else(|| malformed("bad duration"))?),
            None => None,
        };
        for text in fields {
            if text.is_empty() {
                continue;
            }
            let text = std::str::from_utf8(text).map_err(|_| malformed("annotation text is not UTF-8"))?;
            out.push(Annotation { onset_s: onset, duration_s: duration, text: text.to_owned() });
        }
    }
    Ok(out)
}

fn parse_stamp(raw: &[u8], signed: bool) -> Option<f64> {
    let s = std::str::from_utf8(raw).ok()?;
    let digits = if signed {
        match s.as_bytes().first()? {
            b'+' | b'-' => &s[1..],
            _ => return None,
        }
    } else {
        s
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return None;
    }
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Parses an EDF+ hypnogram file into stage annotations ordered by onset.
/// Unrecognized annotation texts are counted in [`Hypnogram::ignored`].
pub fn parse_hypnogram(bytes: &[u8]) -> Result<Hypnogram, EdfError> {
    let rec = parse_edf(bytes)?;
    let ann = rec
        .header
        .signals
        .iter()
        .position(|s| s.is_annotation())
        .ok_or(EdfError::NoAnnotationSignal)?;

    let mut hyp = Hypnogram::default();
    for block in rec.signal_record_bytes(ann) {
        for a in parse_tals(block)? {
            match RawStage::from_annotation(&a.text) {
                Some(label) => {
                    let duration_s = a.duration_s.ok_or_else(|| EdfError::MalformedAnnotation {
                        offset: 0,
                        reason: format!("stage annotation at {}s has no duration", a.onset_s),
                    })?;
                    hyp.stages.push(StageAnnotation { onset_s: a.onset_s, duration_s, label });
                }
                None => hyp.ignored += 1,
            }
        }
    }
    if hyp.ignored > 0 {
        log::warn!("ignored {} non-stage annotation(s)", hyp.ignored);
    }
    validate_stages(&mut hyp.stages)?;
    Ok(hyp)
}

/// Sorts by onset and checks non-negative onsets, whole-epoch durations and
/// the absence of overlaps.
pub fn validate_stages(stages: &mut [StageAnnotation]) -> Result<(), EdfError> {
    stages.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for s in stages.iter() {
        let epochs = s.duration_s / STAGE_EPOCH_S;
        if s.onset_s < 0.0 || s.duration_s <= 0.0 || (epochs - epochs.round()).abs() > 1e-9 {
            return Err(EdfError::StageDuration { onset_s: s.onset_s, duration_s: s.duration_s });
        }
    }
    for pair in stages.windows(2) {
        if pair[1].onset_s < pair[0].end_s() - 1e-9 {
            return Err(EdfError::OverlappingStages { first_onset_s: pair[0].onset_s, second_onset_s: pair[1].onset_s });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tals_with_and_without_duration() {
        let block = b"+0\x14\x14\x00+0\x1530\x14Sleep stage W\x14\x00+30\x1560\x14Sleep stage 1\x14\x00+45.5\x14Lights off\x14\x00\x00\x00";
        let anns = parse_tals(block).unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0], Annotation { onset_s: 0.0, duration_s: Some(30.0), text: "Sleep stage W".into() });
        assert_eq!(anns[1].duration_s, Some(60.0));
        assert_eq!(anns[2], Annotation { onset_s: 45.5, duration_s: None, text: "Lights off".into() });
    }

    #[test]
    fn rejects_malformed_stamps() {
        assert!(parse_tals(b"30\x14x\x14\x00").is_err());
        assert!(parse_tals(b"+3a\x14x\x14\x00").is_err());
        assert!(parse_tals(b"+30\x15\x14x\x14\x00").is_err());
        assert!(parse_tals(b"+30\x14x\x00").is_err());
    }

    #[test]
    fn multiple_texts_share_a_stamp() {
        let anns = parse_tals(b"+10\x1530\x14a\x14b\x14\x00").unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[1].text, "b");
    }

    #[test]
    fn validation() {
        let st = |o, d| StageAnnotation { onset_s: o, duration_s: d, label: RawStage::W };
        let mut ok = vec![st(30.0, 30.0), st(0.0, 30.0)];
        validate_stages(&mut ok).unwrap();
        assert_eq!(ok[0].onset_s, 0.0);
        assert!(matches!(validate_stages(&mut [st(0.0, 60.0), st(30.0, 30.0)]), Err(EdfError::OverlappingStages { .. })));
        assert!(matches!(validate_stages(&mut [st(0.0, 45.0)]), Err(EdfError::StageDuration { .. })));
    }

    #[test]
    fn stage_codes_roundtrip() {
        for s in [RawStage::W, RawStage::S1, RawStage::S2, RawStage::S3, RawStage::S4, RawStage::R, RawStage::M, RawStage::Unknown] {
            assert_eq!(RawStage::from_annotation(s.annotation_text()), Some(s));
        }
        assert_eq!(RawStage::from_annotation("Sleep stage w"), None);
    }
}
