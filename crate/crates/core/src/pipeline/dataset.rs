//! Per-recording prepared dataset file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic             8 bytes  "SLPEPOCH"
//! version           u32      1
//! subject_id        u32 length + UTF-8 bytes
//! recording_id      u32 length + UTF-8 bytes
//! sampling_rate     f64      Hz
//! samples_per_epoch u32
//! n_epochs          u32
//! per epoch:
//!   position        u32      30-s window index from recording start
//!   label           u8       0=W 1=N1 2=N2 3=N3 4=REM
//!   samples         samples_per_epoch x f32
//! ```

use std::fs;
use std::path::Path;

use super::{EpochOrigin, LabeledEpoch, PipelineError, StageClass};

pub const DATASET_MAGIC: &[u8; 8] = b"SLPEPOCH";
pub const DATASET_VERSION: u32 = 1;

/// The normalized, labeled epochs of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecording {
    pub subject_id: String,
    pub recording_id: String,
    pub sampling_rate: f64,
    pub samples_per_epoch: usize,
    pub epochs: Vec<LabeledEpoch>,
}

impl PreparedRecording {
    pub fn new(
        subject_id: impl Into<String>,
        recording_id: impl Into<String>,
        sampling_rate: f64,
        samples_per_epoch: usize,
        epochs: Vec<LabeledEpoch>,
    ) -> Result<Self, PipelineError> {
        for (index, e) in epochs.iter().enumerate() {
            if e.samples.len() != samples_per_epoch {
                return Err(PipelineError::EpochLength { index, expected: samples_per_epoch, found: e.samples.len() });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            recording_id: recording_id.into(),
            sampling_rate,
            samples_per_epoch,
            epochs,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.epochs.len() * (5 + 4 * self.samples_per_epoch));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        put_str(&mut out, &self.subject_id);
        put_str(&mut out, &self.recording_id);
        out.extend_from_slice(&self.sampling_rate.to_le_bytes());
        out.extend_from_slice(&(self.samples_per_epoch as u32).to_le_bytes());
        out.extend_from_slice(&(self.epochs.len() as u32).to_le_bytes());
        for e in &self.epochs {
            out.extend_from_slice(&(e.position as u32).to_le_bytes());
            out.push(e.label.index() as u8);
            for v in &e.samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != DATASET_MAGIC {
            return Err(bad("not a prepared dataset file (bad magic)"));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(bad(&format!("unsupported dataset version {version}")));
        }
        let subject_id = r.string()?;
        let recording_id = r.string()?;
        let sampling_rate = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let spe = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut epochs = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let position = r.u32()? as usize;
            let code = r.take(1)?[0];
            let label = StageClass::from_index(code as usize).ok_or_else(|| bad(&format!("invalid label code {code}")))?;
            let raw = r.take(spe * 4)?;
            let samples = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            epochs.push(LabeledEpoch {
                samples,
                label,
                subject_id: subject_id.clone(),
                position,
                origin: EpochOrigin::Recorded,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last epoch"));
        }
        Ok(Self { subject_id, recording_id, sampling_rate, samples_per_epoch: spe, epochs })
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn bad(reason: &str) -> PipelineError {
    PipelineError::Dataset(reason.to_owned())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, PipelineError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("identifier is not UTF-8"))
    }
}
