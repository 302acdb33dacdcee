//! Content-addressed cache of preprocessed recordings.
//!
//! The key hashes the input file bytes together with the preprocessing
//! config, so editing either produces a new entry. Entries hold `f64`
//! samples, making a cached result bit-identical to a fresh computation, and
//! carry a digest of their payload so a damaged entry is noticed and rebuilt.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{Context, Result};
use lookaround_core::preprocess::{preprocess_pipeline, MontagedRecording, PreprocessConfig};
use lookaround_core::recording::raw::raw_paths;
use lookaround_core::recording::{read_edf, read_raw, Recording};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const FORMAT: &str = "lookaround-preprocessed-v1";

/// Reads a recording by extension: `.edf` or raw (`.json`/`.bin`).
pub fn read_recording(path: &Path) -> Result<Recording> {
    let is_edf = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"));
    let rec = if is_edf {
        read_edf(path)
    } else {
        read_raw(path)
    };
    rec.with_context(|| format!("reading recording {}", path.display()))
}

fn input_files(path: &Path) -> Vec<PathBuf> {
    let is_edf = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"));
    if is_edf {
        vec![path.to_path_buf()]
    } else {
        let (json, bin) = raw_paths(path);
        vec![json, bin]
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    format: String,
    id: String,
    patient_id: String,
    channel_labels: Vec<String>,
    fs: f64,
    n_samples: usize,
    payload_sha256: String,
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
    /// Entries found damaged and rebuilt.
    pub repaired: AtomicUsize,
}

impl CacheStats {
    pub fn snapshot(&self) -> (usize, usize, usize) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
            self.repaired.load(Ordering::Relaxed),
        )
    }
}

pub struct PreprocessCache {
    dir: Option<PathBuf>,
    pub stats: CacheStats,
}

impl PreprocessCache {
    /// `None` computes every recording afresh.
    pub fn new(dir: Option<PathBuf>) -> Self {
        PreprocessCache {
            dir,
            stats: CacheStats::default(),
        }
    }

    pub fn key(&self, path: &Path, cfg: &PreprocessConfig) -> Result<String> {
        let mut h = Sha256::new();
        h.update(FORMAT.as_bytes());
        h.update(serde_json::to_vec(cfg)?);
        for f in input_files(path) {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex(&h.finalize()))
    }

    pub fn entry_paths(&self, key: &str) -> Option<(PathBuf, PathBuf)> {
        self.dir
            .as_ref()
            .map(|d| (d.join(format!("{key}.json")), d.join(format!("{key}.bin"))))
    }

    /// Preprocessed form of the recording at `path`.
    pub fn load(&self, path: &Path, cfg: &PreprocessConfig) -> Result<MontagedRecording> {
        let Some(_) = &self.dir else {
            self.stats.misses.fetch_add(1, Ordering::Relaxed);
            return compute(path, cfg);
        };
        let key = self.key(path, cfg)?;
        let (json, bin) = self.entry_paths(&key).expect("cache dir set");
        if json.exists() || bin.exists() {
            match read_entry(&json, &bin) {
                Ok(rec) => {
                    self.stats.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(rec);
                }
                Err(_) => {
                    self.stats.repaired.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        let rec = compute(path, cfg)?;
        write_entry(&rec, &json, &bin)?;
        Ok(rec)
    }
}

fn compute(path: &Path, cfg: &PreprocessConfig) -> Result<MontagedRecording> {
    let rec = read_recording(path)?;
    preprocess_pipeline(&rec, cfg).with_context(|| format!("preprocessing {}", path.display()))
}

fn write_entry(rec: &MontagedRecording, json: &Path, bin: &Path) -> Result<()> {
    if let Some(dir) = json.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut payload = Vec::with_capacity(rec.n_channels() * rec.n_samples() * 8);
    for v in rec.samples.iter().flatten() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = EntryHeader {
        format: FORMAT.into(),
        id: rec.id.clone(),
        patient_id: rec.patient_id.clone(),
        channel_labels: rec.channel_labels.clone(),
        fs: rec.fs,
        n_samples: rec.n_samples(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    // Payload first: a header only ever points at a complete payload.
    let tmp = bin.with_extension("bin.tmp");
    fs::write(&tmp, &payload).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, bin)?;
    fs::write(json, serde_json::to_string_pretty(&header)?)
        .with_context(|| format!("writing {}", json.display()))?;
    Ok(())
}

fn read_entry(json: &Path, bin: &Path) -> Result<MontagedRecording> {
    let header: EntryHeader = serde_json::from_slice(&fs::read(json)?)?;
    anyhow::ensure!(
        header.format == FORMAT,
        "unknown cache format {}",
        header.format
    );
    let payload = fs::read(bin)?;
    anyhow::ensure!(
        hex(&Sha256::digest(&payload)) == header.payload_sha256,
        "payload digest mismatch"
    );
    let n = header.n_samples;
    anyhow::ensure!(
        payload.len() == header.channel_labels.len() * n * 8,
        "payload size mismatch"
    );
    let samples = payload
        .chunks_exact(n * 8)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    let rec = Recording::new(
        header.id,
        header.patient_id,
        header.channel_labels,
        header.fs,
        samples,
    )?;
    Ok(MontagedRecording::new(rec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_recording, SynthSpec};
    use lookaround_core::recording::write_raw;

    fn fixture(dir: &Path) -> PathBuf {
        let spec = SynthSpec {
            n_patients: 3,
            duration_s: 300.0,
            seizures_per_hour: 0.0,
            ..SynthSpec::default()
        };
        let (rec, _) = generate_recording(&spec, 0, 0).unwrap();
        let base = dir.join("rec");
        write_raw(&rec, &base).unwrap();
        dir.join("rec.json")
    }

    #[test]
    fn warm_cache_hits_and_matches_bypass() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path());
        let cfg = PreprocessConfig::default();
        let cache = PreprocessCache::new(Some(dir.path().join("cache")));
        let cold = cache.load(&path, &cfg).unwrap();
        let warm = cache.load(&path, &cfg).unwrap();
        assert_eq!(cache.stats.snapshot(), (1, 1, 0));
        let direct = preprocess_pipeline(&read_raw(&path).unwrap(), &cfg).unwrap();
        assert_eq!(cold, direct);
        assert_eq!(warm, direct);
    }

    #[test]
    fn corrupt_entry_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path());
        let cfg = PreprocessConfig::default();
        let cache = PreprocessCache::new(Some(dir.path().join("cache")));
        let first = cache.load(&path, &cfg).unwrap();
        let (_, bin) = cache.entry_paths(&cache.key(&path, &cfg).unwrap()).unwrap();
        let mut bytes = fs::read(&bin).unwrap();
        bytes[1000] ^= 0x40;
        fs::write(&bin, bytes).unwrap();
        let again = cache.load(&path, &cfg).unwrap();
        assert_eq!(cache.stats.snapshot(), (0, 2, 1));
        assert_eq!(again, first);
        cache.load(&path, &cfg).unwrap();
        assert_eq!(cache.stats.snapshot().0, 1);
    }

    #[test]
    fn key_tracks_config_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path());
        let cache = PreprocessCache::new(Some(dir.path().join("cache")));
        let a = cache.key(&path, &PreprocessConfig::default()).unwrap();
        let b = cache
            .key(
                &path,
                &PreprocessConfig {
                    notch_hz: 60.0,
                    ..PreprocessConfig::default()
                },
            )
            .unwrap();
        assert_ne!(a, b);
        let bin = dir.path().join("rec.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert_ne!(cache.key(&path, &PreprocessConfig::default()).unwrap(), a);
    }
}
