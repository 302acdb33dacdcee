//! Raw recording format: `<name>.json` sidecar plus `<name>.bin` payload of
//! little-endian `f32` samples, channel-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::normalize_label;
use super::{io_err, Recording, RecordingError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub patient_id: String,
    pub fs: f64,
    pub channel_labels: Vec<String>,
    pub n_samples: usize,
}

/// Returns the `(json, bin)` pair for a path given with either extension or none.
pub fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut bin = base.into_os_string();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

pub fn read_raw(path: &Path) -> Result<Recording> {
    let (json_path, bin_path) = raw_paths(path);
    let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let header: RawHeader =
        serde_json::from_str(&text).map_err(|e| RecordingError::InvalidRawHeader(e.to_string()))?;
    let payload = fs::read(&bin_path).map_err(io_err(&bin_path))?;
    decode_raw(header, &payload, &json_path)
}

fn decode_raw(header: RawHeader, payload: &[u8], json_path: &Path) -> Result<Recording> {
    let n_ch = header.channel_labels.len();
    let expected = (n_ch * header.n_samples * 4) as u64;
    if payload.len() as u64 != expected {
        return Err(RecordingError::HeaderPayloadMismatch {
            expected,
            actual: payload.len() as u64,
        });
    }
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for (c, label) in header.channel_labels.iter().enumerate() {
        let Some(label) = normalize_label(label) else {
            continue;
        };
        let start = c * header.n_samples * 4;
        let row: Vec<f64> = payload[start..start + header.n_samples * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        labels.push(label);
        samples.push(row);
    }
    let id = if header.id.is_empty() {
        json_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        header.id
    };
    Recording::new(id, header.patient_id, labels, header.fs, samples)
}

/// Writes `rec` as `<base>.json` + `<base>.bin`, narrowing samples to `f32`.
pub fn write_raw(rec: &Recording, base: &Path) -> Result<()> {
    let (json_path, bin_path) = raw_paths(base);
    if let Some(dir) = json_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let header = RawHeader {
        id: rec.id.clone(),
        patient_id: rec.patient_id.clone(),
        fs: rec.fs,
        channel_labels: rec.channel_labels.clone(),
        n_samples: rec.n_samples(),
    };
    let text = serde_json::to_string_pretty(&header).expect("raw header serialises");
    fs::write(&json_path, text).map_err(io_err(&json_path))?;
    fs::write(&bin_path, encode_payload(rec)).map_err(io_err(&bin_path))?;
    Ok(())
}

pub fn encode_payload(rec: &Recording) -> Vec<u8> {
    let mut payload = Vec::with_capacity(rec.n_channels() * rec.n_samples() * 4);
    for row in &rec.samples {
        for &v in row {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    payload
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n_samples: usize, fs: f64) -> RawHeader {
        RawHeader {
            id: "rec".into(),
            patient_id: "p1".into(),
            fs,
            channel_labels: vec!["Fp1".into(), "Fp2".into()],
            n_samples,
        }
    }

    #[test]
    fn zeros_decode() {
        let rec = decode_raw(header(4, 128.0), &[0u8; 32], Path::new("x.json")).unwrap();
        assert_eq!(rec.n_channels(), 2);
        assert!(rec.samples.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(rec.duration_s(), 4.0 / 128.0);
    }

    #[test]
    fn one_second_at_256() {
        let rec = decode_raw(
            header(256, 256.0),
            &vec![0u8; 256 * 2 * 4],
            Path::new("x.json"),
        )
        .unwrap();
        assert_eq!(rec.duration_s(), 1.0);
    }

    #[test]
    fn truncated_payload() {
        let err = decode_raw(
            header(256, 256.0),
            &vec![0u8; 256 * 2 * 4 - 4],
            Path::new("x.json"),
        );
        assert!(matches!(
            err,
            Err(RecordingError::HeaderPayloadMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recording::new(
            "abc",
            "p9",
            vec!["Cz".into(), "Pz".into()],
            250.0,
            vec![vec![1.5, -2.25, 3.0], vec![0.0, 7.0, -1.0]],
        )
        .unwrap();
        write_raw(&rec, &dir.path().join("abc")).unwrap();
        let back = read_raw(&dir.path().join("abc.json")).unwrap();
        assert_eq!(back, rec);
    }
}
