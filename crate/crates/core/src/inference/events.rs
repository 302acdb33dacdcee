//! Thresholding a probability trace into seizure events.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InferenceError, ProbabilityTrace, Result};
use crate::recording::annotations::format_annotations;
use crate::recording::{AnnotationSet, SeizureEvent};

/// Post-processing of raw positive runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventHygiene {
    /// Events separated by less than this many seconds are merged.
    pub merge_gap_s: f64,
    /// Events longer than this are split into consecutive pieces.
    pub max_event_s: f64,
}

impl Default for EventHygiene {
    fn default() -> Self {
        EventHygiene {
            merge_gap_s: 90.0,
            max_event_s: 300.0,
        }
    }
}

/// Detected seizures of one recording: sorted, non-overlapping, each of
/// positive duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub recording_id: String,
    pub events: Vec<SeizureEvent>,
    pub duration_s: f64,
}

impl EventList {
    pub fn empty(recording_id: impl Into<String>, duration_s: f64) -> Self {
        EventList {
            recording_id: recording_id.into(),
            events: Vec::new(),
            duration_s,
        }
    }

    /// Builds a list from `(start, end)` intervals, which must already be
    /// sorted and disjoint.
    pub fn from_intervals(
        recording_id: impl Into<String>,
        intervals: &[(f64, f64)],
        duration_s: f64,
    ) -> Self {
        EventList {
            recording_id: recording_id.into(),
            events: intervals
                .iter()
                .map(|&(a, b)| SeizureEvent::seizure(a, b - a))
                .collect(),
            duration_s,
        }
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.events.iter().map(|e| (e.onset_s, e.end_s())).collect()
    }

    pub fn to_annotations(&self) -> AnnotationSet {
        AnnotationSet {
            recording_id: self.recording_id.clone(),
            events: self.events.clone(),
        }
    }

    /// Hypothesis TSV, same columns as reference annotations.
    pub fn to_tsv(&self) -> String {
        format_annotations(&self.to_annotations())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())
            .map_err(|e| InferenceError::Io(path.display().to_string(), e))
    }
}

/// Maximal runs `[start, end)` of cells with `p ≥ threshold`.
fn positive_runs(values: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, values.len()));
    }
    runs
}

/// Merges close events, then splits long ones.
pub fn apply_hygiene(intervals: &[(f64, f64)], hygiene: &EventHygiene) -> Vec<(f64, f64)> {
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for &(a, b) in intervals {
        match merged.last_mut() {
            Some(last) if a - last.1 < hygiene.merge_gap_s => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let mut out = Vec::with_capacity(merged.len());
    for (a, b) in merged {
        let pieces = ((b - a) / hygiene.max_event_s).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let start = a + k as f64 * hygiene.max_event_s;
            let end = if k + 1 == pieces {
                b
            } else {
                a + (k + 1) as f64 * hygiene.max_event_s
            };
            out.push((start, end));
        }
    }
    out
}

/// Cells with `p ≥ threshold` become positive; maximal positive runs become
/// events (the last cell clipped to the recording end), then close events are
/// merged and long events split.
pub fn binarize_and_extract(
    trace: &ProbabilityTrace,
    threshold: f64,
    hygiene: &EventHygiene,
) -> Result<EventList> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(InferenceError::InvalidThreshold(threshold));
    }
    let raw: Vec<(f64, f64)> = positive_runs(&trace.values, threshold)
        .into_iter()
        .map(|(a, b)| (a as f64, (b as f64).min(trace.duration_s)))
        .filter(|(a, b)| b > a)
        .collect();
    Ok(EventList::from_intervals(
        trace.recording_id.clone(),
        &apply_hygiene(&raw, hygiene),
        trace.duration_s,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(values: Vec<f64>) -> ProbabilityTrace {
        let n = values.len();
        ProbabilityTrace {
            recording_id: "r".into(),
            coverage: vec![1; n],
            values,
            duration_s: n as f64,
        }
    }

    #[test]
    fn zeros_give_nothing() {
        let ev =
            binarize_and_extract(&trace(vec![0.0; 100]), 0.85, &EventHygiene::default()).unwrap();
        assert!(ev.events.is_empty());
    }

    #[test]
    fn merge_example() {
        let mut v = vec![0.0; 100];
        for i in (10..=20).chain(25..=30) {
            v[i] = 0.9;
        }
        let ev = binarize_and_extract(&trace(v), 0.85, &EventHygiene::default()).unwrap();
        assert_eq!(ev.intervals(), vec![(10.0, 31.0)]);
    }

    #[test]
    fn threshold_inclusive_and_split() {
        let v = vec![0.85; 700];
        let ev = binarize_and_extract(&trace(v), 0.85, &EventHygiene::default()).unwrap();
        assert_eq!(
            ev.intervals(),
            vec![(0.0, 300.0), (300.0, 600.0), (600.0, 700.0)]
        );
    }

    #[test]
    fn last_partial_cell_clipped() {
        let mut t = trace(vec![0.0, 0.0, 1.0]);
        t.duration_s = 2.5;
        let ev = binarize_and_extract(&t, 0.5, &EventHygiene::default()).unwrap();
        assert_eq!(ev.intervals(), vec![(2.0, 2.5)]);
    }

    #[test]
    fn invalid_threshold() {
        assert!(binarize_and_extract(&trace(vec![0.5]), 1.0, &EventHygiene::default()).is_err());
    }

    /// Scan-based oracle: per-second labels, then run-length, merge and split
    /// written out with explicit loops.
    fn oracle(values: &[f64], thr: f64, gap: f64, max_len: f64) -> Vec<(f64, f64)> {
        let mut runs: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < values.len() {
            if values[i] >= thr {
                let mut j = i;
                while j < values.len() && values[j] >= thr {
                    j += 1;
                }
                runs.push((i as f64, j as f64));
                i = j;
            } else {
                i += 1;
            }
        }
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for r in runs {
            if !merged.is_empty() && r.0 - merged[merged.len() - 1].1 < gap {
                let k = merged.len() - 1;
                merged[k].1 = r.1;
            } else {
                merged.push(r);
            }
        }
        let mut out = Vec::new();
        for (a, b) in merged {
            let pieces = ((b - a) / max_len).ceil() as usize;
            for k in 0..pieces {
                out.push((
                    a + k as f64 * max_len,
                    (a + (k + 1) as f64 * max_len).min(b),
                ));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_scan_oracle(
            values in prop::collection::vec(prop_oneof![Just(0.0), Just(0.9), 0.0f64..1.0], 1..400),
            thr in 0.05f64..0.95,
            gap in 0.0f64..30.0,
            max_len in 1.0f64..60.0,
        ) {
            let hy = EventHygiene { merge_gap_s: gap, max_event_s: max_len };
            let ev = binarize_and_extract(&trace(values.clone()), thr, &hy).unwrap();
            let got = ev.intervals();
            let want = oracle(&values, thr, gap, max_len);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9);
            }
            for w in got.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
            prop_assert!(got.iter().all(|(a, b)| b > a));
        }

        #[test]
        fn higher_threshold_never_adds_positive_time(
            values in prop::collection::vec(0.0f64..1.0, 1..300),
            t1 in 0.05f64..0.95,
            dt in 0.0f64..0.5,
        ) {
            let t2 = (t1 + dt).min(0.99);
            let hy = EventHygiene { merge_gap_s: 0.0, max_event_s: 1e9 };
            let total = |t: f64| binarize_and_extract(&trace(values.clone()), t, &hy).unwrap()
                .intervals().iter().map(|(a, b)| b - a).sum::<f64>();
            prop_assert!(total(t2) <= total(t1));
        }
    }
}
