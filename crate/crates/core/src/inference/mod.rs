//! Overlap-averaged sliding-window inference, ensembling and event
//! extraction.
//!
//! Target windows start at `0, stride, 2·stride, …` seconds. If the last of
//! these leaves trailing seconds uncovered, one extra window aligned to the
//! end of the recording is added. Context beyond the recording edges is
//! filled by mirroring. Each window's seizure probability is credited to the
//! 1-s cells its target covers, and each cell reports the mean over all
//! windows that cover it.

pub mod events;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    embed_patches, logits, logits_embedded, ForwardOutput, ModelError, ModelParams,
};
use crate::preprocess::{reflect_index, MontagedRecording};
use crate::windowing::{window_rows, WindowSpec};

pub use events::{apply_hygiene, binarize_and_extract, EventHygiene, EventList};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("recording of {duration_s} s is shorter than the {target_s} s target")]
    TooShortRecording { duration_s: f64, target_s: f64 },
    #[error(
        "stride {stride_s} s must be a whole number of seconds dividing the {target_s} s target"
    )]
    InvalidStride { stride_s: f64, target_s: f64 },
    #[error("traces differ: {0}")]
    LengthMismatch(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// One seizure probability per second of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTrace {
    pub recording_id: String,
    pub values: Vec<f64>,
    /// Number of windows averaged into each cell.
    pub coverage: Vec<u32>,
    pub duration_s: f64,
}

impl ProbabilityTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `second,probability,coverage` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("second,probability,coverage\n");
        for (i, (p, c)) in self.values.iter().zip(&self.coverage).enumerate() {
            out.push_str(&format!("{i},{p},{c}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())
            .map_err(|e| InferenceError::Io(path.display().to_string(), e))
    }
}

/// Anything that maps context windows to seizure probabilities.
pub trait WindowClassifier: Sync {
    fn window(&self) -> WindowSpec;

    /// Seizure probability of each window whose target starts at the given
    /// sample of `rows` (`[channel][sample]`). Context outside the recording
    /// is mirrored.
    fn classify(&self, rows: &[Vec<f64>], target_starts: &[usize]) -> Result<Vec<f64>>;
}

/// Windows evaluated per forward call.
const BATCH: usize = 8;

impl ModelParams {
    /// Seizure probabilities for windows built by copying samples.
    fn classify_direct(&self, rows: &[Vec<f64>], starts: &[usize]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let chunks: Vec<Result<Vec<f64>>> = starts
            .par_chunks(BATCH)
            .map(|chunk| {
                let mut x = Vec::with_capacity(chunk.len() * cfg.n_channels * cfg.window_samples());
                for &s in chunk {
                    for row in window_rows(rows, s, &cfg.window) {
                        x.extend_from_slice(&row);
                    }
                }
                let out = logits(self, &x, chunk.len())?;
                Ok(out
                    .chunks_exact(2)
                    .map(|l| ForwardOutput::from_logits(l).seizure_probability())
                    .collect())
            })
            .collect();
        Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.concat())
    }

    /// Seizure probabilities with patch embeddings computed once per patch
    /// position and shared between overlapping windows. Requires every
    /// window to start on the patch grid.
    fn classify_cached(&self, rows: &[Vec<f64>], starts: &[usize]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (l, d, np, c) = (
            cfg.patch_len as i64,
            cfg.embed_dim,
            cfg.n_patches(),
            cfg.n_channels,
        );
        let lb = cfg.window.look_behind_samples() as i64;
        let first = |s: usize| (s as i64 - lb).div_euclid(l);
        let g_min = starts.iter().map(|&s| first(s)).min().unwrap_or(0);
        let g_max = starts.iter().map(|&s| first(s)).max().unwrap_or(0) + np as i64;
        let n_pos = (g_max - g_min) as usize;
        // [channel][position] × D
        let cache: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|row| {
                let n = row.len();
                let mut patches = Vec::with_capacity(n_pos * l as usize);
                for g in g_min..g_max {
                    patches.extend((g * l..(g + 1) * l).map(|i| row[reflect_index(i, n)]));
                }
                embed_patches(self, &patches)
            })
            .collect::<std::result::Result<_, _>>()?;
        let chunks: Vec<Result<Vec<f64>>> = starts
            .par_chunks(BATCH)
            .map(|chunk| {
                let mut emb = Vec::with_capacity(chunk.len() * c * np * d);
                for &s in chunk {
                    let off = (first(s) - g_min) as usize;
                    for ch in &cache {
                        emb.extend_from_slice(&ch[off * d..(off + np) * d]);
                    }
                }
                let out = logits_embedded(self, emb, chunk.len())?;
                Ok(out
                    .chunks_exact(2)
                    .map(|l| ForwardOutput::from_logits(l).seizure_probability())
                    .collect())
            })
            .collect();
        Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.concat())
    }
}

impl WindowClassifier for ModelParams {
    fn window(&self) -> WindowSpec {
        self.config.window
    }

    fn classify(&self, rows: &[Vec<f64>], starts: &[usize]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if rows.len() != cfg.n_channels {
            return Err(ModelError::ShapeMismatch(format!(
                "{} channels, model expects {}",
                rows.len(),
                cfg.n_channels
            ))
            .into());
        }
        let l = cfg.patch_len;
        let aligned =
            cfg.window.look_behind_samples() % l == 0 && starts.iter().all(|s| s % l == 0);
        if aligned && starts.len() > 1 {
            self.classify_cached(rows, starts)
        } else {
            self.classify_direct(rows, starts)
        }
    }
}

/// Target start cells (seconds) of the sliding windows over `n_cells`
/// seconds.
pub fn window_starts(n_cells: usize, target_cells: usize, stride_cells: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=n_cells - target_cells).step_by(stride_cells).collect();
    if starts.last().map_or(true, |&s| s + target_cells < n_cells) {
        starts.push(n_cells - target_cells);
    }
    starts
}

fn whole_seconds(x: f64) -> Option<usize> {
    (x > 0.0 && (x - x.round()).abs() < 1e-9).then(|| x.round() as usize)
}

/// Overlap-averaged per-second seizure probability of `rec`.
pub fn sliding_infer(
    rec: &MontagedRecording,
    model: &dyn WindowClassifier,
    stride_s: f64,
) -> Result<ProbabilityTrace> {
    sliding_infer_rows(&rec.id, &rec.samples, rec.fs, model, stride_s)
}

pub fn sliding_infer_rows(
    recording_id: &str,
    rows: &[Vec<f64>],
    fs: f64,
    model: &dyn WindowClassifier,
    stride_s: f64,
) -> Result<ProbabilityTrace> {
    let spec = model.window();
    let n = rows.first().map_or(0, Vec::len);
    let duration_s = n as f64 / fs;
    let bad_stride = || InferenceError::InvalidStride {
        stride_s,
        target_s: spec.target_s,
    };
    let target = whole_seconds(spec.target_s).ok_or_else(bad_stride)?;
    let stride = whole_seconds(stride_s)
        .filter(|s| target % s == 0)
        .ok_or_else(bad_stride)?;
    let fs_int = whole_seconds(fs).ok_or_else(bad_stride)?;
    if duration_s < spec.target_s {
        return Err(InferenceError::TooShortRecording {
            duration_s,
            target_s: spec.target_s,
        });
    }
    let n_cells = duration_s.ceil() as usize;
    let starts = window_starts(n_cells, target, stride);
    let sample_starts: Vec<usize> = starts.iter().map(|s| s * fs_int).collect();
    let probs = model.classify(rows, &sample_starts)?;
    let mut sum = vec![0.0; n_cells];
    let mut coverage = vec![0u32; n_cells];
    for (&s, &p) in starts.iter().zip(&probs) {
        for cell in s..s + target {
            sum[cell] += p;
            coverage[cell] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&coverage)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok(ProbabilityTrace {
        recording_id: recording_id.to_string(),
        values,
        coverage,
        duration_s,
    })
}

/// Elementwise mean of member traces.
pub fn ensemble(traces: &[ProbabilityTrace]) -> Result<ProbabilityTrace> {
    let first = traces.first().ok_or(InferenceError::EmptyEnsemble)?;
    for t in &traces[1..] {
        if t.recording_id != first.recording_id || t.len() != first.len() {
            return Err(InferenceError::LengthMismatch(format!(
                "{} ({} cells) vs {} ({} cells)",
                first.recording_id,
                first.len(),
                t.recording_id,
                t.len()
            )));
        }
    }
    let k = traces.len() as f64;
    let values = (0..first.len())
        .map(|i| traces.iter().map(|t| t.values[i]).sum::<f64>() / k)
        .collect();
    let coverage = (0..first.len())
        .map(|i| traces.iter().map(|t| t.coverage[i]).sum())
        .collect();
    Ok(ProbabilityTrace {
        recording_id: first.recording_id.clone(),
        values,
        coverage,
        duration_s: first.duration_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub stride_s: f64,
    pub threshold: f64,
    pub hygiene: EventHygiene,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            stride_s: 2.0,
            threshold: 0.85,
            hygiene: EventHygiene::default(),
        }
    }
}

/// Sliding inference with each member's own context placement, averaged,
/// then thresholded into events.
pub fn run_ensemble_configs(
    rec: &MontagedRecording,
    members: &[&dyn WindowClassifier],
    cfg: &InferConfig,
) -> Result<(EventList, ProbabilityTrace)> {
    let traces = members
        .iter()
        .map(|m| sliding_infer(rec, *m, cfg.stride_s))
        .collect::<Result<Vec<_>>>()?;
    let trace = ensemble(&traces)?;
    let events = binarize_and_extract(&trace, cfg.threshold, &cfg.hygiene)?;
    Ok((events, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::preprocess::MontageSpec;
    use crate::recording::Recording;

    /// Probability from the mean of the first channel over the whole window,
    /// so context placement matters.
    struct MeanScorer(WindowSpec);

    impl WindowClassifier for MeanScorer {
        fn window(&self) -> WindowSpec {
            self.0
        }

        fn classify(&self, rows: &[Vec<f64>], starts: &[usize]) -> Result<Vec<f64>> {
            Ok(starts
                .iter()
                .map(|&s| {
                    let w = window_rows(&rows[..1], s, &self.0);
                    let m = w[0].iter().sum::<f64>() / w[0].len() as f64;
                    1.0 / (1.0 + (-m).exp())
                })
                .collect())
        }
    }

    struct Constant(f64, WindowSpec);

    impl WindowClassifier for Constant {
        fn window(&self) -> WindowSpec {
            self.1
        }

        fn classify(&self, _: &[Vec<f64>], starts: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![self.0; starts.len()])
        }
    }

    fn rec(seconds: usize, fs: usize) -> MontagedRecording {
        let n = seconds * fs;
        let rows = (0..18)
            .map(|c| {
                (0..n)
                    .map(|i| ((i * (c + 3)) as f64 * 0.001).sin())
                    .collect()
            })
            .collect();
        MontagedRecording::new(
            Recording::new(
                "r",
                "p",
                MontageSpec::default().derivation_names(),
                128.0,
                rows,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn window_count_for_one_hour() {
        assert_eq!(window_starts(3600, 16, 2).len(), 1793);
        assert_eq!(window_starts(3601, 16, 2).last(), Some(&3585));
        assert_eq!(window_starts(16, 16, 2), vec![0]);
    }

    #[test]
    fn interior_coverage_is_target_over_stride() {
        let r = rec(300, 128);
        let t = sliding_infer(&r, &Constant(0.3, WindowSpec::default()), 2.0).unwrap();
        assert_eq!(t.len(), 300);
        assert!(t.coverage[16..284].iter().all(|&c| c == 8));
        assert!(t.coverage.iter().all(|&c| c >= 1));
        assert!(t.values.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn too_short_and_bad_stride() {
        let r = rec(10, 128);
        assert!(matches!(
            sliding_infer(&r, &Constant(0.3, WindowSpec::default()), 2.0),
            Err(InferenceError::TooShortRecording { .. })
        ));
        let r = rec(40, 128);
        assert!(sliding_infer(&r, &Constant(0.3, WindowSpec::default()), 3.0).is_err());
    }

    #[test]
    fn ensemble_mean_and_errors() {
        let mk = |v: f64| ProbabilityTrace {
            recording_id: "r".into(),
            values: vec![v],
            coverage: vec![1],
            duration_s: 1.0,
        };
        let e = ensemble(&[mk(0.2), mk(0.4), mk(0.9)]).unwrap();
        assert!((e.values[0] - 0.5).abs() < 1e-15);
        assert_eq!(ensemble(&[mk(0.7)]).unwrap().values, vec![0.7]);
        let mut other = mk(0.1);
        other.values.push(0.1);
        other.coverage.push(1);
        assert!(ensemble(&[mk(0.2), other]).is_err());
        assert!(ensemble(&[]).is_err());
    }

    /// Nested-loop accumulator over explicitly enumerated windows.
    fn brute_force(rows: &[Vec<f64>], spec: WindowSpec, stride: usize, n_cells: usize) -> Vec<f64> {
        let target = spec.target_s as usize;
        let scorer = MeanScorer(spec);
        let mut starts = Vec::new();
        let mut s = 0;
        while s + target <= n_cells {
            starts.push(s);
            s += stride;
        }
        if *starts.last().unwrap() + target < n_cells {
            starts.push(n_cells - target);
        }
        let mut out = vec![0.0; n_cells];
        for (cell, o) in out.iter_mut().enumerate() {
            let mut total = 0.0;
            let mut count = 0;
            for &st in &starts {
                if st <= cell && cell < st + target {
                    total += scorer.classify(rows, &[st * 128]).unwrap()[0];
                    count += 1;
                }
            }
            *o = total / count as f64;
        }
        out
    }

    #[test]
    fn matches_brute_force_accumulator() {
        let r = rec(300, 128);
        for target in [8.0, 16.0] {
            for stride in [1, 2, 4] {
                let spec = WindowSpec::new(5.0, target, 3.0);
                let t = sliding_infer(&r, &MeanScorer(spec), stride as f64).unwrap();
                let want = brute_force(&r.samples, spec, stride, 300);
                for (a, b) in t.values.iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn cached_embeddings_match_direct_windows() {
        let mut cfg = ModelConfig::tiny();
        cfg.window = WindowSpec::new(2.0, 4.0, 2.0);
        cfg.patch_len = 64;
        let params = ModelParams::init(&cfg, 2).unwrap();
        let r = rec(30, 128);
        let starts: Vec<usize> = (0..=26).step_by(2).map(|s| s * 128).collect();
        let a = params.classify_cached(&r.samples, &starts).unwrap();
        let b = params.classify_direct(&r.samples, &starts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} {y}");
        }
        let t1 = sliding_infer(&r, &params, 2.0).unwrap();
        let t2 = sliding_infer(&r, &params, 2.0).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn identical_members_equal_single_model() {
        let r = rec(120, 128);
        let a = Constant(0.9, WindowSpec::new(64.0, 16.0, 0.0));
        let cfg = InferConfig::default();
        let (single, _) = run_ensemble_configs(&r, &[&a], &cfg).unwrap();
        let (triple, _) = run_ensemble_configs(&r, &[&a, &a, &a], &cfg).unwrap();
        assert_eq!(single, triple);
        let b = Constant(0.1, WindowSpec::new(0.0, 16.0, 64.0));
        let c = Constant(0.2, WindowSpec::new(32.0, 16.0, 32.0));
        let (_, trace) = run_ensemble_configs(&r, &[&a, &b, &c], &cfg).unwrap();
        assert!(trace.values.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }
}
