use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::EdfError;

pub(crate) const FIXED_HEADER_BYTES: usize = 256;
pub(crate) const SIGNAL_HEADER_BYTES: usize = 256;

/// Label of the EDF+ annotation channel.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Per-signal header block.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        self.physical_min + (f64::from(digital) - f64::from(self.digital_min)) * self.gain()
    }

    /// Nearest digital value for a physical value, clamped to the digital range.
    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = (physical - self.physical_min) / self.gain() + f64::from(self.digital_min);
        d.round().clamp(f64::from(self.digital_min), f64::from(self.digital_max)) as i16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_datetime: NaiveDateTime,
    /// The 44-byte reserved field; `EDF+C` / `EDF+D` for EDF+ files.
    pub reserved: String,
    pub n_data_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
    /// Original header bytes, used to reproduce numeric field spellings.
    pub(crate) source: Option<Vec<u8>>,
}

impl EdfHeader {
    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * self.signals.len()
    }

    /// Bytes per data record across all signals.
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }

    pub fn sampling_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration_s
    }

    pub fn duration_s(&self) -> f64 {
        self.n_data_records as f64 * self.record_duration_s
    }

    pub(crate) fn parse(bytes: &[u8]) -> Result<Self, EdfError> {
        if bytes.len() < FIXED_HEADER_BYTES {
            return Err(EdfError::Truncated { expected: FIXED_HEADER_BYTES, actual: bytes.len() });
        }
        let mut cur = Cursor { bytes, pos: 0 };
        let version = cur.text("version", 8)?;
        let patient_id = cur.text("patient_id", 80)?;
        let recording_id = cur.text("recording_id", 80)?;
        let start_date = cur.text("start_date", 8)?;
        let start_time = cur.text("start_time", 8)?;
        let start_datetime = parse_start(&start_date, &start_time)?;
        let header_len: usize = cur.number("header_bytes", 8)?;
        let reserved = cur.text("reserved", 44)?;
        let n_records: i64 = cur.number("n_data_records", 8)?;
        let record_duration_s: f64 = cur.number("record_duration", 8)?;
        let n_signals: usize = cur.number("n_signals", 4)?;

        if n_signals == 0 {
            return Err(EdfError::InvalidField { field: "n_signals", reason: "at least one signal is required".into() });
        }
        let expected = FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * n_signals;
        if header_len != expected {
            return Err(EdfError::HeaderLength { declared: header_len, expected });
        }
        if bytes.len() < expected {
            return Err(EdfError::Truncated { expected, actual: bytes.len() });
        }
        if reserved.starts_with("EDF+D") {
            return Err(EdfError::Discontinuous);
        }
        if !(record_duration_s >= 0.0 && record_duration_s.is_finite()) {
            return Err(EdfError::InvalidField { field: "record_duration", reason: format!("{record_duration_s}") });
        }

        let ns = n_signals;
        let labels = cur.texts("label", 16, ns)?;
        let transducers = cur.texts("transducer", 80, ns)?;
        let dims = cur.texts("physical_dim", 8, ns)?;
        let pmins: Vec<f64> = cur.numbers("physical_min", 8, ns)?;
        let pmaxs: Vec<f64> = cur.numbers("physical_max", 8, ns)?;
        let dmins: Vec<i32> = cur.numbers("digital_min", 8, ns)?;
        let dmaxs: Vec<i32> = cur.numbers("digital_max", 8, ns)?;
        let prefilters = cur.texts("prefiltering", 80, ns)?;
        let spr: Vec<usize> = cur.numbers("samples_per_record", 8, ns)?;
        let sig_reserved = cur.texts("signal_reserved", 32, ns)?;

        let mut signals = Vec::with_capacity(ns);
        for i in 0..ns {
            let s = SignalHeader {
                label: labels[i].clone(),
                transducer: transducers[i].clone(),
                physical_dim: dims[i].clone(),
                physical_min: pmins[i],
                physical_max: pmaxs[i],
                digital_min: dmins[i],
                digital_max: dmaxs[i],
                prefiltering: prefilters[i].clone(),
                samples_per_record: spr[i],
                reserved: sig_reserved[i].clone(),
            };
            if s.digital_min >= s.digital_max {
                return Err(EdfError::DegenerateScaling { signal: i, reason: "digital_min >= digital_max".into() });
            }
            if s.physical_min == s.physical_max {
                return Err(EdfError::DegenerateScaling { signal: i, reason: "physical_min == physical_max".into() });
            }
            if s.samples_per_record == 0 {
                return Err(EdfError::InvalidField { field: "samples_per_record", reason: format!("signal {i} has zero samples per record") });
            }
            signals.push(s);
        }

        let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
        let data_len = bytes.len() - expected;
        let n_data_records = if n_records < 0 {
            // -1 marks an unfinished recording; infer from the file size.
            data_len / record_bytes
        } else {
            n_records as usize
        };

        Ok(Self {
            version,
            patient_id,
            recording_id,
            start_datetime,
            reserved,
            n_data_records,
            record_duration_s,
            signals,
            source: Some(bytes[..expected].to_vec()),
        })
    }

    pub(crate) fn render(&self) -> Vec<u8> {
        let ns = self.signals.len();
        let mut w = Writer { out: Vec::with_capacity(self.header_bytes()), source: self.source.as_deref() };
        w.text(&self.version, 8);
        w.text(&self.patient_id, 80);
        w.text(&self.recording_id, 80);
        w.text(&self.start_datetime.format("%d.%m.%y").to_string(), 8);
        w.text(&self.start_datetime.format("%H.%M.%S").to_string(), 8);
        w.number(self.header_bytes() as f64, 8);
        w.text(&self.reserved, 44);
        w.number(self.n_data_records as f64, 8);
        w.number(self.record_duration_s, 8);
        w.number(ns as f64, 4);
        for s in &self.signals {
            w.text(&s.label, 16);
        }
        for s in &self.signals {
            w.text(&s.transducer, 80);
        }
        for s in &self.signals {
            w.text(&s.physical_dim, 8);
        }
        for s in &self.signals {
            w.number(s.physical_min, 8);
        }
        for s in &self.signals {
            w.number(s.physical_max, 8);
        }
        for s in &self.signals {
            w.number(f64::from(s.digital_min), 8);
        }
        for s in &self.signals {
            w.number(f64::from(s.digital_max), 8);
        }
        for s in &self.signals {
            w.text(&s.prefiltering, 80);
        }
        for s in &self.signals {
            w.number(s.samples_per_record as f64, 8);
        }
        for s in &self.signals {
            w.text(&s.reserved, 32);
        }
        w.out
    }
}

fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime, EdfError> {
    let bad = |field: &'static str, text: &str| EdfError::InvalidNumber { field, text: text.to_owned() };
    let parts = |s: &str| -> Option<[u32; 3]> {
        let mut it = s.split('.').map(|p| p.trim().parse::<u32>().ok());
        let v = [it.next()??, it.next()??, it.next()??];
        it.next().is_none().then_some(v)
    };
    let [dd, mm, yy] = parts(date).ok_or_else(|| bad("start_date", date))?;
    let [h, m, s] = parts(time).ok_or_else(|| bad("start_time", time))?;
    // EDF clipping date: yy 85..=99 is 19yy, otherwise 20yy.
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    let d = NaiveDate::from_ymd_opt(year, mm, dd).ok_or_else(|| bad("start_date", date))?;
    let t = NaiveTime::from_hms_opt(h, m, s).ok_or_else(|| bad("start_time", time))?;
    Ok(NaiveDateTime::new(d, t))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn raw(&mut self, width: usize) -> &[u8] {
        let s = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        s
    }

    fn text(&mut self, field: &'static str, width: usize) -> Result<String, EdfError> {
        let raw = self.raw(width);
        if raw.iter().any(|b| !(0x20..=0x7e).contains(b)) {
            return Err(EdfError::NonAscii { field });
        }
        let s = std::str::from_utf8(raw).expect("printable ASCII");
        Ok(s.trim_end_matches(' ').to_owned())
    }

    fn number<T: std::str::FromStr>(&mut self, field: &'static str, width: usize) -> Result<T, EdfError> {
        let text = self.text(field, width)?;
        text.trim().parse().map_err(|_| EdfError::InvalidNumber { field, text })
    }

    fn texts(&mut self, field: &'static str, width: usize, n: usize) -> Result<Vec<String>, EdfError> {
        (0..n).map(|_| self.text(field, width)).collect()
    }

    fn numbers<T: std::str::FromStr>(&mut self, field: &'static str, width: usize, n: usize) -> Result<Vec<T>, EdfError> {
        (0..n).map(|_| self.number(field, width)).collect()
    }
}

struct Writer<'a> {
    out: Vec<u8>,
    source: Option<&'a [u8]>,
}

impl Writer<'_> {
    fn text(&mut self, s: &str, width: usize) {
        let bytes = s.as_bytes();
        let n = bytes.len().min(width);
        self.out.extend_from_slice(&bytes[..n]);
        self.out.resize(self.out.len() + (width - n), b' ');
    }

    /// Writes a number, reusing the source spelling when it denotes the same
    /// value so that parse -> render is byte-exact.
    fn number(&mut self, value: f64, width: usize) {
        let pos = self.out.len();
        if let Some(src) = self.source.and_then(|s| s.get(pos..pos + width)) {
            if let Some(v) = std::str::from_utf8(src).ok().and_then(|t| t.trim().parse::<f64>().ok()) {
                if v == value {
                    self.out.extend_from_slice(src);
                    return;
                }
            }
        }
        let text = format_number(value, width);
        self.text(&text, width);
    }
}

/// Shortest decimal spelling of `value` that fits in `width` characters.
pub(crate) fn format_number(value: f64, width: usize) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        let s = format!("{}", value as i64);
        if s.len() <= width {
            return s;
        }
    }
    let s = format!("{value}");
    if s.len() <= width {
        return s;
    }
    let int_len = format!("{}", value.trunc() as i64).len() + usize::from(value < 0.0 && value.trunc() == 0.0);
    let decimals = width.saturating_sub(int_len + 1);
    let s = format!("{value:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_owned() } else { s };
    s[..s.len().min(width)].to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting_fits() {
        assert_eq!(format_number(-100.0, 8), "-100");
        assert_eq!(format_number(0.25, 8), "0.25");
        assert_eq!(format_number(30.0, 8), "30");
        assert_eq!(format_number(1.0 / 3.0, 8), "0.333333");
        assert_eq!(format_number(-187.12345678, 8), "-187.123");
        assert!(format_number(123456.789, 8).len() <= 8);
    }

    #[test]
    fn start_date_century() {
        let a = parse_start("16.04.89", "23.15.00").unwrap();
        assert_eq!(a.format("%Y-%m-%d %H:%M:%S").to_string(), "1989-04-16 23:15:00");
        let b = parse_start("01.02.03", "00.00.01").unwrap();
        assert_eq!(b.format("%Y").to_string(), "2003");
        assert!(parse_start("1.2", "00.00.00").is_err());
        assert!(parse_start("31.02.03", "00.00.00").is_err());
    }
}
