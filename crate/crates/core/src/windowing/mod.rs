//! Context windows around 16-s targets: placement, labelling, extraction,
//! hour-chunk curation and the balanced epoch sampler.

pub mod ranges;
pub mod sampler;

use serde::{Deserialize, Serialize};

use crate::preprocess::{reflect_index, MontagedRecording};
use crate::recording::AnnotationSet;
use crate::MODEL_FS;

pub use sampler::{
    sample_epoch, CategoryProportions, IndexedRecording, SamplerConfig, SegmentSource, TrainIndex,
};

#[derive(Debug, thiserror::Error)]
pub enum WindowError {
    #[error("target [{start_s}, {end_s}) s lies outside the {duration_s} s recording")]
    TargetOutOfBounds {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("no patient in the training set can produce {0:?} segments")]
    EmptyCategory(SegmentCategory),
    #[error("invalid sampler config: {0}")]
    InvalidSampler(String),
}

pub type Result<T> = std::result::Result<T, WindowError>;

/// Durations, in seconds, of the look-behind context, the labelled target and
/// the look-ahead context of one model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub look_behind_s: f64,
    pub target_s: f64,
    pub look_ahead_s: f64,
    #[serde(default = "default_fs")]
    pub fs: f64,
}

fn default_fs() -> f64 {
    MODEL_FS
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::new(32.0, 16.0, 32.0)
    }
}

fn to_samples(seconds: f64, fs: f64, what: &str) -> Result<usize> {
    let n = seconds * fs;
    if !(seconds >= 0.0) || (n - n.round()).abs() > 1e-6 {
        return Err(WindowError::InvalidSpec(format!(
            "{what} {seconds} s is not a whole number of samples"
        )));
    }
    Ok(n.round() as usize)
}

impl WindowSpec {
    pub fn new(look_behind_s: f64, target_s: f64, look_ahead_s: f64) -> Self {
        WindowSpec {
            look_behind_s,
            target_s,
            look_ahead_s,
            fs: MODEL_FS,
        }
    }

    /// The no-context baseline.
    pub fn target_only(target_s: f64) -> Self {
        WindowSpec::new(0.0, target_s, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(WindowError::InvalidSpec(format!("fs {}", self.fs)));
        }
        if !(self.target_s > 0.0) {
            return Err(WindowError::InvalidSpec(format!(
                "target {} s",
                self.target_s
            )));
        }
        to_samples(self.look_behind_s, self.fs, "look-behind")?;
        to_samples(self.target_s, self.fs, "target")?;
        to_samples(self.look_ahead_s, self.fs, "look-ahead")?;
        Ok(())
    }

    pub fn total_s(&self) -> f64 {
        self.look_behind_s + self.target_s + self.look_ahead_s
    }

    pub fn look_behind_samples(&self) -> usize {
        (self.look_behind_s * self.fs).round() as usize
    }

    pub fn target_samples(&self) -> usize {
        (self.target_s * self.fs).round() as usize
    }

    pub fn look_ahead_samples(&self) -> usize {
        (self.look_ahead_s * self.fs).round() as usize
    }

    pub fn total_samples(&self) -> usize {
        self.look_behind_samples() + self.target_samples() + self.look_ahead_samples()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentCategory {
    FullySeizure,
    FullyNonseizure,
    Mixed,
}

impl SegmentCategory {
    pub const ALL: [SegmentCategory; 3] = [
        SegmentCategory::FullySeizure,
        SegmentCategory::FullyNonseizure,
        SegmentCategory::Mixed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    Seizure,
    Nonseizure,
}

impl TargetLabel {
    pub fn class_index(self) -> usize {
        match self {
            TargetLabel::Nonseizure => 0,
            TargetLabel::Seizure => 1,
        }
    }
}

/// Seconds of `[start, end)` covered by the (disjoint) `seizures`.
pub fn seizure_coverage(seizures: &[(f64, f64)], start: f64, end: f64) -> f64 {
    seizures
        .iter()
        .map(|&(a, b)| (end.min(b) - start.max(a)).max(0.0))
        .sum()
}

/// Category and training label of the target `[start_s, start_s + target_s)`.
/// The label is seizure only when coverage strictly exceeds half the target.
pub fn label_target(
    ann: &AnnotationSet,
    start_s: f64,
    target_s: f64,
) -> (SegmentCategory, TargetLabel) {
    label_from_intervals(&ann.intervals(), start_s, target_s)
}

pub fn label_from_intervals(
    seizures: &[(f64, f64)],
    start_s: f64,
    target_s: f64,
) -> (SegmentCategory, TargetLabel) {
    let covered = seizure_coverage(seizures, start_s, start_s + target_s);
    let category = if covered >= target_s {
        SegmentCategory::FullySeizure
    } else if covered == 0.0 {
        SegmentCategory::FullyNonseizure
    } else {
        SegmentCategory::Mixed
    };
    let label = if covered > target_s / 2.0 {
        TargetLabel::Seizure
    } else {
        TargetLabel::Nonseizure
    };
    (category, label)
}

/// One model input with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `[channel][sample]`, `spec.total_samples()` samples per channel.
    pub samples: Vec<Vec<f64>>,
    pub target_label: TargetLabel,
    pub category: SegmentCategory,
    pub recording_id: String,
    pub start_s: f64,
}

/// Copies `[start − look_behind, start + target + look_ahead)` samples of
/// every channel; indices outside the recording are mirrored about the
/// nearest boundary. `target_start` is in samples.
pub fn extract_window(
    rec: &MontagedRecording,
    target_start: usize,
    spec: &WindowSpec,
) -> Result<Vec<Vec<f64>>> {
    let n = rec.n_samples();
    if target_start + spec.target_samples() > n {
        return Err(WindowError::TargetOutOfBounds {
            start_s: target_start as f64 / rec.fs,
            end_s: (target_start + spec.target_samples()) as f64 / rec.fs,
            duration_s: rec.duration_s(),
        });
    }
    Ok(window_rows(&rec.samples, target_start, spec))
}

/// [`extract_window`] on bare `[channel][sample]` rows, without the bounds
/// check on the target.
pub fn window_rows(rows: &[Vec<f64>], target_start: usize, spec: &WindowSpec) -> Vec<Vec<f64>> {
    let first = target_start as i64 - spec.look_behind_samples() as i64;
    let total = spec.total_samples();
    rows.iter()
        .map(|row| {
            let n = row.len() as i64;
            if first >= 0 && first + total as i64 <= n {
                row[first as usize..first as usize + total].to_vec()
            } else {
                (first..first + total as i64)
                    .map(|i| row[reflect_index(i, row.len())])
                    .collect()
            }
        })
        .collect()
}

fn start_sample(start_s: f64, fs: f64) -> Result<usize> {
    let k = start_s * fs;
    if start_s < 0.0 || (k - k.round()).abs() > 1e-6 {
        return Err(WindowError::InvalidSpec(format!(
            "target start {start_s} s is not on the sample grid"
        )));
    }
    Ok(k.round() as usize)
}

/// Extracts the window whose target begins at `start_of_target_s` and labels
/// it against `ann`.
pub fn extract_segment(
    rec: &MontagedRecording,
    ann: &AnnotationSet,
    start_of_target_s: f64,
    spec: &WindowSpec,
) -> Result<Segment> {
    let start = start_sample(start_of_target_s, rec.fs)?;
    let samples = extract_window(rec, start, spec)?;
    let (category, target_label) = label_target(ann, start_of_target_s, spec.target_s);
    Ok(Segment {
        samples,
        target_label,
        category,
        recording_id: rec.id.clone(),
        start_s: start_of_target_s,
    })
}

pub const HOUR_S: f64 = 3600.0;

/// Consecutive one-hour intervals of `[0, duration_s)` (the last may be
/// shorter) that overlap at least one seizure.
pub fn chunk_and_filter_hours(duration_s: f64, ann: &AnnotationSet) -> Vec<(f64, f64)> {
    let mut kept = Vec::new();
    let mut start = 0.0;
    while start < duration_s {
        let end = (start + HOUR_S).min(duration_s);
        if ann
            .events
            .iter()
            .any(|e| e.onset_s < end && e.end_s() > start)
        {
            kept.push((start, end));
        }
        start += HOUR_S;
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::{Recording, SeizureEvent};
    use proptest::prelude::*;

    fn ann(intervals: &[(f64, f64)]) -> AnnotationSet {
        AnnotationSet::from_events(
            "r",
            intervals
                .iter()
                .map(|&(a, b)| SeizureEvent::seizure(a, b - a)),
        )
    }

    fn montaged(seconds: usize) -> MontagedRecording {
        let n = seconds * 128;
        let rows = (0..18)
            .map(|c| (0..n).map(|i| (c * 100_000 + i) as f64).collect())
            .collect();
        MontagedRecording::new(
            Recording::new(
                "m",
                "p",
                crate::preprocess::MontageSpec::default().derivation_names(),
                128.0,
                rows,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn labels() {
        let a = ann(&[(100.0, 200.0)]);
        assert_eq!(
            label_target(&a, 120.0, 16.0),
            (SegmentCategory::FullySeizure, TargetLabel::Seizure)
        );
        assert_eq!(
            label_target(&a, 93.0, 16.0),
            (SegmentCategory::Mixed, TargetLabel::Seizure)
        );
        assert_eq!(
            label_target(&a, 92.0, 16.0),
            (SegmentCategory::Mixed, TargetLabel::Nonseizure)
        );
        assert_eq!(
            label_target(&a, 10.0, 16.0),
            (SegmentCategory::FullyNonseizure, TargetLabel::Nonseizure)
        );
        assert_eq!(
            label_target(&a, 84.0, 16.0),
            (SegmentCategory::FullyNonseizure, TargetLabel::Nonseizure)
        );
    }

    #[test]
    fn window_sizes() {
        let rec = montaged(200);
        let spec = WindowSpec::new(32.0, 16.0, 32.0);
        let w = extract_window(&rec, 100 * 128, &spec).unwrap();
        assert_eq!(w.len(), 18);
        assert_eq!(w[0].len(), 10240);
        assert_eq!(w[3][0], rec.samples[3][68 * 128]);
        assert_eq!(w[3][10239], rec.samples[3][148 * 128 - 1]);

        let w = extract_window(&rec, 0, &WindowSpec::target_only(16.0)).unwrap();
        assert_eq!(w[0], rec.samples[0][..2048].to_vec());
    }

    #[test]
    fn leading_context_is_mirrored() {
        let rec = montaged(100);
        let spec = WindowSpec::new(32.0, 16.0, 32.0);
        let w = extract_window(&rec, 0, &spec).unwrap();
        let ctx = 32 * 128;
        for c in [0, 7, 17] {
            for i in 0..ctx {
                assert_eq!(w[c][i], rec.samples[c][ctx - 1 - i]);
            }
            assert_eq!(w[c][ctx..ctx + 2048], rec.samples[c][..2048]);
        }
    }

    #[test]
    fn target_bounds() {
        let rec = montaged(20);
        assert!(extract_window(&rec, 4 * 128, &WindowSpec::default()).is_ok());
        assert!(matches!(
            extract_window(&rec, 5 * 128, &WindowSpec::default()),
            Err(WindowError::TargetOutOfBounds { .. })
        ));
    }

    #[test]
    fn hour_chunks() {
        let three_hours = 3.0 * HOUR_S;
        assert_eq!(
            chunk_and_filter_hours(three_hours, &ann(&[(4000.0, 4030.0)])),
            vec![(3600.0, 7200.0)]
        );
        assert_eq!(
            chunk_and_filter_hours(three_hours, &ann(&[(3550.0, 3650.0)])),
            vec![(0.0, 3600.0), (3600.0, 7200.0)]
        );
        assert_eq!(
            chunk_and_filter_hours(5000.0, &ann(&[(4900.0, 4950.0)])),
            vec![(3600.0, 5000.0)]
        );
        assert!(chunk_and_filter_hours(5000.0, &ann(&[])).is_empty());
    }

    proptest! {
        #[test]
        fn hour_chunks_match_per_second_scan(
            raw in prop::collection::vec((0u32..14_000, 1u32..400), 0..6),
            hours in 1u32..4,
        ) {
            let duration = hours as f64 * HOUR_S + 1234.0;
            let a = ann(&raw.iter().map(|&(o, d)| (o as f64, (o + d).min(duration as u32) as f64)).filter(|(o, e)| e > o).collect::<Vec<_>>());
            let kept = chunk_and_filter_hours(duration, &a);
            // oracle: hour h retained iff some integer second in it is seizure
            let mut expected = Vec::new();
            for h in 0..=hours {
                let (lo, hi) = (h as f64 * HOUR_S, ((h + 1) as f64 * HOUR_S).min(duration));
                if lo >= duration { break; }
                let hit = (lo as u32..hi as u32).any(|s| a.events.iter().any(|e| e.onset_s < s as f64 + 1.0 && e.end_s() > s as f64));
                if hit { expected.push((lo, hi)); }
            }
            prop_assert_eq!(&kept, &expected);
            for e in &a.events {
                prop_assert!((e.onset_s.floor() as u32..e.end_s().ceil() as u32)
                    .all(|s| kept.iter().any(|&(lo, hi)| s as f64 >= lo && (s as f64) < hi)));
            }
        }

        #[test]
        fn reflection_symmetric_signal_invariant(half in 1usize..40) {
            // a signal symmetric about its left edge is unchanged by mirroring
            let spec = WindowSpec::new(half as f64 / 128.0, 16.0, 0.0);
            let n = 16 * 128 + 64;
            let mut rows = vec![vec![0.0; n]; 18];
            for row in rows.iter_mut() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = ((i as f64) * 0.01).cos();
                }
            }
            let rec = MontagedRecording::new(Recording::new("s", "p",
                crate::preprocess::MontageSpec::default().derivation_names(), 128.0, rows).unwrap()).unwrap();
            let w = extract_window(&rec, half, &spec).unwrap();
            let direct: Vec<f64> = rec.samples[0][..spec.total_samples()].to_vec();
            prop_assert_eq!(&w[0], &direct);
            let mirrored = extract_window(&rec, 0, &spec).unwrap();
            for i in 0..half {
                prop_assert_eq!(mirrored[0][i], mirrored[0][2 * half - 1 - i]);
            }
        }
    }
}
