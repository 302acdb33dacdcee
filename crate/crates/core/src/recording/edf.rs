//! Continuous EDF (and EDF+C) reader and a minimal writer for fixtures.
//!
//! Layout: a 256-byte fixed header, 256 bytes of per-signal header per
//! signal, then data records of interleaved 16-bit little-endian samples.
//! Signals whose labels do not normalise onto the 10-20 vocabulary are
//! dropped, which removes ECG, EMG and `EDF Annotations` channels.

use std::fs;
use std::path::Path;

use super::labels::normalize_label;
use super::{io_err, Recording, RecordingError, Result};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn digital_to_physical(&self, digital: i16) -> f64 {
        let scale =
            (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64;
        (digital as i32 - self.digital_min) as f64 * scale + self.physical_min
    }

    fn physical_to_digital(&self, value: f64) -> i16 {
        let scale =
            (self.digital_max - self.digital_min) as f64 / (self.physical_max - self.physical_min);
        let d = ((value - self.physical_min) * scale + self.digital_min as f64).round();
        d.clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub patient: String,
    pub recording: String,
    pub header_bytes: usize,
    pub n_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

fn field(bytes: &[u8], what: &str) -> Result<String> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| RecordingError::MalformedHeader(format!("{what}: non-ASCII bytes")))?;
    Ok(text.trim().to_string())
}

fn number<T: std::str::FromStr>(bytes: &[u8], what: &str) -> Result<T> {
    let text = field(bytes, what)?;
    text.parse()
        .map_err(|_| RecordingError::MalformedHeader(format!("{what}: cannot parse {text:?}")))
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER {
        return Err(RecordingError::MalformedHeader(format!(
            "file is {} bytes, shorter than the fixed header",
            bytes.len()
        )));
    }
    let version = field(&bytes[0..8], "version")?;
    if version != "0" {
        return Err(RecordingError::MalformedHeader(format!(
            "version field {version:?}"
        )));
    }
    let patient = field(&bytes[8..88], "patient")?;
    let recording = field(&bytes[88..168], "recording")?;
    let header_bytes: usize = number(&bytes[184..192], "header bytes")?;
    let reserved = field(&bytes[192..236], "reserved")?;
    if reserved.starts_with("EDF+D") {
        return Err(RecordingError::MalformedHeader(
            "discontinuous EDF+ is not supported".into(),
        ));
    }
    let n_records: i64 = number(&bytes[236..244], "number of records")?;
    if n_records < 0 {
        return Err(RecordingError::MalformedHeader(format!(
            "number of records {n_records}"
        )));
    }
    let record_duration: f64 = number(&bytes[244..252], "record duration")?;
    if !(record_duration > 0.0) {
        return Err(RecordingError::MalformedHeader(format!(
            "record duration {record_duration}"
        )));
    }
    let ns: usize = number(&bytes[252..256], "number of signals")?;
    if header_bytes != FIXED_HEADER + SIGNAL_HEADER * ns {
        return Err(RecordingError::MalformedHeader(format!(
            "header size {header_bytes} inconsistent with {ns} signals"
        )));
    }
    if bytes.len() < header_bytes {
        return Err(RecordingError::MalformedHeader(
            "signal headers truncated".into(),
        ));
    }

    // Signal header fields are stored column-wise: all labels, then all
    // transducers, and so on.
    let widths = [16usize, 80, 8, 8, 8, 8, 8, 80, 8, 32];
    let mut offsets = [0usize; 10];
    let mut acc = FIXED_HEADER;
    for (o, w) in offsets.iter_mut().zip(widths) {
        *o = acc;
        acc += w * ns;
    }
    let at = |col: usize, i: usize| {
        let start = offsets[col] + widths[col] * i;
        &bytes[start..start + widths[col]]
    };
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = field(at(0, i), "label")?;
        let sig = SignalHeader {
            physical_dimension: field(at(2, i), "physical dimension")?,
            physical_min: number(at(3, i), "physical minimum")?,
            physical_max: number(at(4, i), "physical maximum")?,
            digital_min: number(at(5, i), "digital minimum")?,
            digital_max: number(at(6, i), "digital maximum")?,
            samples_per_record: number(at(8, i), "samples per record")?,
            label,
        };
        if sig.digital_max <= sig.digital_min {
            return Err(RecordingError::MalformedHeader(format!(
                "signal {}: digital range [{}, {}]",
                sig.label, sig.digital_min, sig.digital_max
            )));
        }
        if sig.physical_max == sig.physical_min {
            return Err(RecordingError::MalformedHeader(format!(
                "signal {}: empty physical range",
                sig.label
            )));
        }
        signals.push(sig);
    }
    Ok(EdfHeader {
        patient,
        recording,
        header_bytes,
        n_records: n_records as usize,
        record_duration,
        signals,
    })
}

pub fn read_edf(path: &Path) -> Result<Recording> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_edf(&bytes, &id)
}

pub fn decode_edf(bytes: &[u8], id: &str) -> Result<Recording> {
    let header = parse_header(bytes)?;
    let record_bytes = header.record_bytes();
    let expected = (header.n_records * record_bytes) as u64;
    let actual = (bytes.len() - header.header_bytes) as u64;
    if actual < expected {
        return Err(RecordingError::TruncatedRecord { expected, actual });
    }

    let kept: Vec<(usize, String)> = header
        .signals
        .iter()
        .enumerate()
        .filter_map(|(i, s)| normalize_label(&s.label).map(|l| (i, l)))
        .collect();
    let mut fs = None;
    for &(i, _) in &kept {
        let rate = header.signals[i].samples_per_record as f64 / header.record_duration;
        match fs {
            None => fs = Some(rate),
            Some(first) if first != rate => {
                return Err(RecordingError::MixedSamplingRates { first, other: rate });
            }
            _ => {}
        }
    }
    let Some(fs) = fs else {
        return Err(RecordingError::Invalid("no EEG signals in EDF file".into()));
    };

    // Byte offset of each signal inside a data record.
    let mut signal_offsets = Vec::with_capacity(header.signals.len());
    let mut acc = 0;
    for s in &header.signals {
        signal_offsets.push(acc);
        acc += s.samples_per_record * 2;
    }
    let data = &bytes[header.header_bytes..];
    let mut labels = Vec::with_capacity(kept.len());
    let mut samples = Vec::with_capacity(kept.len());
    for (i, label) in kept {
        let sig = &header.signals[i];
        let mut row = Vec::with_capacity(header.n_records * sig.samples_per_record);
        for r in 0..header.n_records {
            let start = r * record_bytes + signal_offsets[i];
            for b in data[start..start + sig.samples_per_record * 2].chunks_exact(2) {
                row.push(sig.digital_to_physical(i16::from_le_bytes([b[0], b[1]])));
            }
        }
        labels.push(label);
        samples.push(row);
    }
    let patient_id = header
        .patient
        .split_whitespace()
        .next()
        .unwrap_or("")
        .to_string();
    Recording::new(id, patient_id, labels, fs, samples)
}

fn put_field(out: &mut Vec<u8>, text: &str, width: usize) {
    let mut bytes: Vec<u8> = text.bytes().filter(u8::is_ascii).take(width).collect();
    bytes.resize(width, b' ');
    out.extend_from_slice(&bytes);
}

fn format_number(v: f64, width: usize) -> String {
    let s = format!("{v}");
    if s.len() <= width {
        return s;
    }
    for precision in (0..width).rev() {
        let s = format!("{v:.precision$}");
        if s.len() <= width {
            return s;
        }
    }
    panic!("{v} does not fit an EDF field of width {width}");
}

/// Writes `rec` as a continuous 16-bit EDF file.
///
/// Physical ranges are the integer floor/ceiling of each channel's extremes,
/// the digital range is the full `i16` span. One-second records are used when
/// the sampling rate is integral and divides the sample count, otherwise the
/// whole recording is one record.
pub fn write_edf(rec: &Recording, path: &Path) -> Result<()> {
    let bytes = encode_edf(rec)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn encode_edf(rec: &Recording) -> Result<Vec<u8>> {
    let n = rec.n_samples();
    let (spr, n_records, record_duration) = if rec.fs.fract() == 0.0 && n % (rec.fs as usize) == 0 {
        (rec.fs as usize, n / rec.fs as usize, 1.0)
    } else {
        (n, 1, n as f64 / rec.fs)
    };
    let signals: Vec<SignalHeader> = rec
        .channel_labels
        .iter()
        .zip(&rec.samples)
        .map(|(label, row)| {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min).floor();
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
            let (lo, hi) = if n == 0 {
                (-1.0, 1.0)
            } else if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo, hi)
            };
            SignalHeader {
                label: label.clone(),
                physical_dimension: "uV".into(),
                physical_min: format_number(lo, 8).parse().unwrap(),
                physical_max: format_number(hi, 8).parse().unwrap(),
                digital_min: i16::MIN as i32,
                digital_max: i16::MAX as i32,
                samples_per_record: spr,
            }
        })
        .collect();

    let ns = signals.len();
    let header_bytes = FIXED_HEADER + SIGNAL_HEADER * ns;
    let mut out = Vec::with_capacity(header_bytes + n * ns * 2);
    put_field(&mut out, "0", 8);
    put_field(&mut out, &rec.patient_id, 80);
    put_field(&mut out, &rec.id, 80);
    put_field(&mut out, "01.01.00", 8);
    put_field(&mut out, "00.00.00", 8);
    put_field(&mut out, &header_bytes.to_string(), 8);
    put_field(&mut out, "", 44);
    put_field(&mut out, &n_records.to_string(), 8);
    put_field(&mut out, &format_number(record_duration, 8), 8);
    put_field(&mut out, &ns.to_string(), 4);
    for s in &signals {
        put_field(&mut out, &s.label, 16);
    }
    for _ in &signals {
        put_field(&mut out, "", 80);
    }
    for s in &signals {
        put_field(&mut out, &s.physical_dimension, 8);
    }
    for s in &signals {
        put_field(&mut out, &format_number(s.physical_min, 8), 8);
    }
    for s in &signals {
        put_field(&mut out, &format_number(s.physical_max, 8), 8);
    }
    for s in &signals {
        put_field(&mut out, &s.digital_min.to_string(), 8);
    }
    for s in &signals {
        put_field(&mut out, &s.digital_max.to_string(), 8);
    }
    for _ in &signals {
        put_field(&mut out, "", 80);
    }
    for s in &signals {
        put_field(&mut out, &s.samples_per_record.to_string(), 8);
    }
    for _ in &signals {
        put_field(&mut out, "", 32);
    }
    for r in 0..n_records {
        for (s, row) in signals.iter().zip(&rec.samples) {
            for &v in &row[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&s.physical_to_digital(v).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(dmin: i32, dmax: i32, pmin: f64, pmax: f64) -> SignalHeader {
        SignalHeader {
            label: "Cz".into(),
            physical_dimension: "uV".into(),
            physical_min: pmin,
            physical_max: pmax,
            digital_min: dmin,
            digital_max: dmax,
            samples_per_record: 1,
        }
    }

    #[test]
    fn digital_minimum_maps_to_physical_minimum() {
        let s = signal(-2048, 2047, -200.0, 200.0);
        assert_eq!(s.digital_to_physical(-2048), -200.0);
    }

    #[test]
    fn digital_zero_conversion() {
        let s = signal(-2048, 2047, -200.0, 200.0);
        let expected = 2048.0 * (400.0 / 4095.0) - 200.0;
        assert!((s.digital_to_physical(0) - expected).abs() < 1e-12);
        assert!((s.digital_to_physical(0) - 0.0488).abs() < 1e-4);
    }

    fn fixture() -> Recording {
        let samples = (0..3)
            .map(|c| {
                (0..512)
                    .map(|i| ((i * (c + 3)) % 97) as f64 - 48.0 + 0.37 * c as f64)
                    .collect()
            })
            .collect();
        Recording::new(
            "fixture",
            "p1",
            vec!["Fp1".into(), "Cz".into(), "O2".into()],
            256.0,
            samples,
        )
        .unwrap()
    }

    #[test]
    fn writer_reader_round_trip_is_stable() {
        let first = decode_edf(&encode_edf(&fixture()).unwrap(), "fixture").unwrap();
        let bytes = encode_edf(&first).unwrap();
        let second = decode_edf(&bytes, "fixture").unwrap();
        assert_eq!(first, second);
        assert_eq!(bytes, encode_edf(&second).unwrap());
    }

    #[test]
    fn non_eeg_and_mixed_rates() {
        let mut rec = fixture();
        rec.channel_labels[1] = "ECG".into();
        let back = decode_edf(&encode_edf(&rec).unwrap(), "x").unwrap();
        assert_eq!(back.channel_labels, vec!["Fp1", "O2"]);

        let mut bytes = encode_edf(&fixture()).unwrap();
        // samples-per-record column for signal 1 (0-based) -> 128
        let offset = 256 + 3 * (16 + 80 + 8 * 5 + 80) + 8;
        bytes[offset..offset + 8].copy_from_slice(b"128     ");
        assert!(matches!(
            decode_edf(&bytes, "x"),
            Err(RecordingError::MixedSamplingRates { .. })
        ));
    }

    #[test]
    fn truncated_and_malformed() {
        let bytes = encode_edf(&fixture()).unwrap();
        let short = &bytes[..bytes.len() - 2];
        assert!(matches!(
            decode_edf(short, "x"),
            Err(RecordingError::TruncatedRecord { .. })
        ));

        let mut bad = bytes.clone();
        bad[252..256].copy_from_slice(b"abcd");
        assert!(matches!(
            decode_edf(&bad, "x"),
            Err(RecordingError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_edf(&bytes[..100], "x"),
            Err(RecordingError::MalformedHeader(_))
        ));
    }
}
