use chrono::NaiveDateTime;

use super::header::{EdfHeader, SignalHeader};
use super::EdfError;

/// A parsed EDF/EDF+ file. Sample data stays in its on-disk encoding until a
/// channel is requested, so opening a multi-channel overnight recording only
/// materializes the channels actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfRecording {
    pub header: EdfHeader,
    data: Vec<u8>,
}

/// One channel decoded to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub label: String,
    pub sampling_rate: f64,
    pub samples: Vec<f64>,
}

/// Digital samples plus calibration for building a recording in memory.
#[derive(Debug, Clone)]
pub struct SignalData {
    pub header: SignalHeader,
    pub digital: Vec<i16>,
}

impl SignalData {
    /// Quantizes physical samples into the signal's digital range.
    pub fn from_physical(header: SignalHeader, physical: &[f64]) -> Self {
        let digital = physical.iter().map(|&v| header.to_digital(v)).collect();
        Self { header, digital }
    }
}

/// Parses a complete EDF/EDF+ byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfRecording, EdfError> {
    let header = EdfHeader::parse(bytes)?;
    let start = header.header_bytes();
    let needed = header.n_data_records * header.record_bytes();
    let available = bytes.len() - start;
    if available < needed {
        return Err(EdfError::Truncated { expected: start + needed, actual: bytes.len() });
    }
    Ok(EdfRecording { data: bytes[start..start + needed].to_vec(), header })
}

impl EdfRecording {
    /// Builds a continuous recording from per-signal digital samples. Every
    /// signal must hold exactly `n_records * samples_per_record` samples.
    pub fn from_signals(
        patient_id: &str,
        recording_id: &str,
        start: NaiveDateTime,
        reserved: &str,
        record_duration_s: f64,
        signals: Vec<SignalData>,
    ) -> Result<Self, EdfError> {
        let first = signals.first().ok_or(EdfError::InvalidField { field: "n_signals", reason: "no signals".into() })?;
        let n_records = first.digital.len() / first.header.samples_per_record.max(1);
        for (i, s) in signals.iter().enumerate() {
            if s.header.samples_per_record == 0 || s.digital.len() != n_records * s.header.samples_per_record {
                return Err(EdfError::InvalidField {
                    field: "samples_per_record",
                    reason: format!("signal {i} has {} samples, not a whole number of {n_records} records", s.digital.len()),
                });
            }
            if s.header.digital_min >= s.header.digital_max || s.header.physical_min == s.header.physical_max {
                return Err(EdfError::DegenerateScaling { signal: i, reason: "empty calibration range".into() });
            }
        }
        let header = EdfHeader {
            version: "0".into(),
            patient_id: patient_id.into(),
            recording_id: recording_id.into(),
            start_datetime: start,
            reserved: reserved.into(),
            n_data_records: n_records,
            record_duration_s,
            signals: signals.iter().map(|s| s.header.clone()).collect(),
            source: None,
        };
        let mut data = Vec::with_capacity(n_records * header.record_bytes());
        for r in 0..n_records {
            for s in &signals {
                let spr = s.header.samples_per_record;
                for d in &s.digital[r * spr..(r + 1) * spr] {
                    data.extend_from_slice(&d.to_le_bytes());
                }
            }
        }
        Ok(Self { header, data })
    }

    /// Serializes header and data records back to EDF bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.render();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.header.signals.iter().map(|s| s.label.as_str())
    }

    /// Byte offset of `signal` inside one data record.
    fn offset_in_record(&self, signal: usize) -> usize {
        self.header.signals[..signal].iter().map(|s| s.samples_per_record * 2).sum()
    }

    /// Raw bytes of `signal` for each data record, in record order.
    pub fn signal_record_bytes(&self, signal: usize) -> impl Iterator<Item = &[u8]> {
        let record = self.header.record_bytes();
        let offset = self.offset_in_record(signal);
        let len = self.header.signals[signal].samples_per_record * 2;
        self.data.chunks_exact(record.max(1)).map(move |r| &r[offset..offset + len])
    }

    pub fn digital_samples(&self, signal: usize) -> Vec<i16> {
        self.signal_record_bytes(signal)
            .flat_map(|r| r.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])))
            .collect()
    }

    pub fn physical_samples(&self, signal: usize) -> Vec<f64> {
        let h = &self.header.signals[signal];
        let (pmin, dmin, gain) = (h.physical_min, f64::from(h.digital_min), h.gain());
        self.signal_record_bytes(signal)
            .flat_map(|r| r.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])))
            .map(|d| pmin + (f64::from(d) - dmin) * gain)
            .collect()
    }

    /// Index of the signal labelled `label` (whitespace-trimmed). An exact
    /// match wins; otherwise `label` may be a word-boundary prefix of exactly
    /// one signal label ("EEG Fpz" selects "EEG Fpz-Cz", while "EEG" is
    /// ambiguous next to "EEG Pz-Oz").
    pub fn channel_index(&self, label: &str) -> Result<usize, EdfError> {
        let wanted = label.trim();
        let labels: Vec<&str> = self.header.signals.iter().map(|s| s.label.trim()).collect();
        let exact: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == wanted).collect();
        let candidates = if exact.is_empty() && !wanted.is_empty() {
            (0..labels.len())
                .filter(|&i| {
                    labels[i].strip_prefix(wanted).is_some_and(|rest| rest.starts_with(|c: char| !c.is_alphanumeric()))
                })
                .collect()
        } else {
            exact
        };
        match candidates.as_slice() {
            [i] => Ok(*i),
            [] => Err(EdfError::ChannelNotFound { label: wanted.to_owned(), available: self.labels().map(str::to_owned).collect() }),
            many => Err(EdfError::AmbiguousChannel { label: wanted.to_owned(), matches: many.len() }),
        }
    }

    /// Decodes the channel labelled `label` into physical units.
    pub fn select_channel(&self, label: &str) -> Result<Channel, EdfError> {
        let i = self.channel_index(label)?;
        Ok(Channel {
            label: self.header.signals[i].label.clone(),
            sampling_rate: self.header.sampling_rate(i),
            samples: self.physical_samples(i),
        })
    }
}
