//! Sample-based and event-based seizure detection scores.
//!
//! Sample mode rasterises both label sets to 1-s cells; a cell is positive
//! when any event overlaps it. Event mode widens every reference event by a
//! pre/post tolerance and matches by any overlap: a reference is detected when
//! some hypothesis touches its widened span, and a hypothesis is false when
//! it touches none. Rates with a zero denominator are reported as 0.

use serde::{Deserialize, Serialize};

use crate::inference::EventList;
use crate::recording::AnnotationSet;
use crate::SECONDS_PER_DAY;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("hypothesis covers {hyp_s} s but the reference recording lasts {ref_s} s")]
    DurationMismatch { hyp_s: f64, ref_s: f64 },
    #[error("no reports to aggregate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ScoringError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub pre_s: f64,
    pub post_s: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            pre_s: 30.0,
            post_s: 60.0,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, sensitivity: f64) -> f64 {
    if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Reference events detected.
    pub tp: usize,
    /// Hypothesis events overlapping some widened reference.
    pub tp_hyp: usize,
    /// Hypothesis events overlapping none.
    pub fp: usize,
    /// Reference events missed.
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub counts: SampleCounts,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
}

impl SampleMetrics {
    pub fn from_counts(counts: SampleCounts) -> Self {
        let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        SampleMetrics {
            counts,
            sensitivity,
            precision,
            f1: f1(precision, sensitivity),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub counts: EventCounts,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    pub fp_per_day: f64,
}

impl EventMetrics {
    pub fn from_counts(counts: EventCounts, duration_s: f64) -> Self {
        let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
        let precision = ratio(counts.tp_hyp, counts.tp_hyp + counts.fp);
        let fp_per_day = if duration_s > 0.0 {
            counts.fp as f64 * SECONDS_PER_DAY / duration_s
        } else {
            0.0
        };
        EventMetrics {
            counts,
            sensitivity,
            precision,
            f1: f1(precision, sensitivity),
            fp_per_day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub recording_id: String,
    pub sample: SampleMetrics,
    pub event: EventMetrics,
    pub total_duration_s: f64,
}

fn rasterize(intervals: &[(f64, f64)], n_cells: usize) -> Vec<bool> {
    let mut cells = vec![false; n_cells];
    for &(a, b) in intervals {
        if b <= a {
            continue;
        }
        let lo = a.floor().max(0.0) as usize;
        let hi = (b.ceil() as usize).min(n_cells);
        for c in cells.iter_mut().take(hi).skip(lo) {
            *c = true;
        }
    }
    cells
}

fn check_duration(hyp: &EventList, duration_s: f64) -> Result<()> {
    if (hyp.duration_s - duration_s).abs() > 1e-6 {
        return Err(ScoringError::DurationMismatch {
            hyp_s: hyp.duration_s,
            ref_s: duration_s,
        });
    }
    Ok(())
}

pub fn score_samples(
    hyp: &EventList,
    reference: &AnnotationSet,
    duration_s: f64,
) -> Result<SampleMetrics> {
    check_duration(hyp, duration_s)?;
    let n = duration_s.ceil() as usize;
    let h = rasterize(&hyp.intervals(), n);
    let r = rasterize(&reference.intervals(), n);
    let mut counts = SampleCounts::default();
    for (&hv, &rv) in h.iter().zip(&r) {
        match (hv, rv) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(SampleMetrics::from_counts(counts))
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

pub fn event_counts(hyp: &[(f64, f64)], reference: &[(f64, f64)], tol: &Tolerance) -> EventCounts {
    let widened: Vec<(f64, f64)> = reference
        .iter()
        .map(|&(a, b)| (a - tol.pre_s, b + tol.post_s))
        .collect();
    let tp = widened
        .iter()
        .filter(|&&r| hyp.iter().any(|&h| overlaps(h, r)))
        .count();
    let tp_hyp = hyp
        .iter()
        .filter(|&&h| widened.iter().any(|&r| overlaps(h, r)))
        .count();
    EventCounts {
        tp,
        tp_hyp,
        fp: hyp.len() - tp_hyp,
        fn_: reference.len() - tp,
    }
}

pub fn score_events(
    hyp: &EventList,
    reference: &AnnotationSet,
    duration_s: f64,
    tol: &Tolerance,
) -> EventMetrics {
    EventMetrics::from_counts(
        event_counts(&hyp.intervals(), &reference.intervals(), tol),
        duration_s,
    )
}

/// Both modes for one recording.
pub fn score_recording(
    hyp: &EventList,
    reference: &AnnotationSet,
    duration_s: f64,
    tol: &Tolerance,
) -> Result<ScoreReport> {
    Ok(ScoreReport {
        recording_id: hyp.recording_id.clone(),
        sample: score_samples(hyp, reference, duration_s)?,
        event: score_events(hyp, reference, duration_s, tol),
        total_duration_s: duration_s,
    })
}

/// Micro-average: counts and durations are pooled, metrics recomputed.
pub fn aggregate(reports: &[ScoreReport]) -> Result<ScoreReport> {
    if reports.is_empty() {
        return Err(ScoringError::Empty);
    }
    if reports.len() == 1 {
        return Ok(reports[0].clone());
    }
    let mut s = SampleCounts::default();
    let mut e = EventCounts::default();
    let mut duration = 0.0;
    for r in reports {
        s.tp += r.sample.counts.tp;
        s.fp += r.sample.counts.fp;
        s.fn_ += r.sample.counts.fn_;
        e.tp += r.event.counts.tp;
        e.tp_hyp += r.event.counts.tp_hyp;
        e.fp += r.event.counts.fp;
        e.fn_ += r.event.counts.fn_;
        duration += r.total_duration_s;
    }
    Ok(ScoreReport {
        recording_id: "all".into(),
        sample: SampleMetrics::from_counts(s),
        event: EventMetrics::from_counts(e, duration),
        total_duration_s: duration,
    })
}

/// Aligned-column table: one row per report with event-mode SDR, FP/day,
/// F1, sensitivity and precision, followed by the sample-mode triple.
pub fn format_table(reports: &[ScoreReport]) -> String {
    let name_w = reports
        .iter()
        .map(|r| r.recording_id.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut out = format!(
        "{:<name_w$}  {:>6}  {:>8}  {:>6}  {:>6}  {:>6}  {:>8}  {:>8}  {:>8}\n",
        "recording", "SDR", "FP/day", "F1", "Sens.", "Prec.", "smp F1", "smp Sens", "smp Prec"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<name_w$}  {:>6.3}  {:>8.2}  {:>6.3}  {:>6.3}  {:>6.3}  {:>8.3}  {:>8.3}  {:>8.3}\n",
            r.recording_id,
            r.event.sensitivity,
            r.event.fp_per_day,
            r.event.f1,
            r.event.sensitivity,
            r.event.precision,
            r.sample.f1,
            r.sample.sensitivity,
            r.sample.precision,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::SeizureEvent;
    use proptest::prelude::*;

    fn hyp(iv: &[(f64, f64)], dur: f64) -> EventList {
        EventList::from_intervals("r", iv, dur)
    }

    fn reference(iv: &[(f64, f64)]) -> AnnotationSet {
        AnnotationSet::from_events(
            "r",
            iv.iter().map(|&(a, b)| SeizureEvent::seizure(a, b - a)),
        )
    }

    #[test]
    fn identity_is_perfect() {
        let iv = [(100.0, 160.0), (1000.0, 1090.5)];
        let r = score_recording(
            &hyp(&iv, 3600.0),
            &reference(&iv),
            3600.0,
            &Tolerance::default(),
        )
        .unwrap();
        for v in [
            r.sample.sensitivity,
            r.sample.precision,
            r.sample.f1,
            r.event.sensitivity,
            r.event.precision,
            r.event.f1,
        ] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(r.event.fp_per_day, 0.0);
    }

    #[test]
    fn sample_arithmetic() {
        // 100 reference seconds, 80 hit, 20 spurious
        let m = score_samples(
            &hyp(&[(20.0, 100.0), (500.0, 520.0)], 1000.0),
            &reference(&[(0.0, 100.0)]),
            1000.0,
        )
        .unwrap();
        assert_eq!(
            m.counts,
            SampleCounts {
                tp: 80,
                fp: 20,
                fn_: 20
            }
        );
        assert!((m.sensitivity - 0.8).abs() < 1e-15);
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert!((m.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn event_examples() {
        let tol = Tolerance::default();
        let m = score_events(
            &hyp(&[(95.0, 110.0)], 3600.0),
            &reference(&[(100.0, 130.0)]),
            3600.0,
            &tol,
        );
        assert_eq!(m.counts.tp, 1);
        assert_eq!(m.counts.fp, 0);

        let m = score_events(
            &hyp(&[(500.0, 510.0)], 43_200.0),
            &reference(&[(10_000.0, 10_060.0)]),
            43_200.0,
            &tol,
        );
        assert_eq!(m.counts.fp, 1);
        assert_eq!(m.fp_per_day, 2.0);

        let m = score_events(
            &hyp(&[], 3600.0),
            &reference(&[(100.0, 130.0)]),
            3600.0,
            &tol,
        );
        assert_eq!(
            (m.sensitivity, m.precision, m.fp_per_day, m.f1),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn duration_mismatch() {
        assert!(matches!(
            score_samples(&hyp(&[], 10.0), &reference(&[]), 20.0),
            Err(ScoringError::DurationMismatch { .. })
        ));
    }

    #[test]
    fn aggregation_pools_counts() {
        let mk = |tp, tp_hyp, fp, fn_| ScoreReport {
            recording_id: "x".into(),
            sample: SampleMetrics::from_counts(SampleCounts::default()),
            event: EventMetrics::from_counts(
                EventCounts {
                    tp,
                    tp_hyp,
                    fp,
                    fn_,
                },
                3600.0,
            ),
            total_duration_s: 3600.0,
        };
        let single = mk(1, 1, 0, 1);
        assert_eq!(aggregate(std::slice::from_ref(&single)).unwrap(), single);
        let a = aggregate(&[mk(1, 1, 0, 1), mk(1, 1, 2, 0)]).unwrap();
        assert!((a.event.sensitivity - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.event.precision - 0.5).abs() < 1e-15);
        assert!((a.event.fp_per_day - 2.0 * 86_400.0 / 7200.0).abs() < 1e-9);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn splitting_a_hypothesis_keeps_sensitivity() {
        let tol = Tolerance::default();
        let r = reference(&[(100.0, 200.0)]);
        let whole = score_events(&hyp(&[(90.0, 210.0)], 1000.0), &r, 1000.0, &tol);
        let split = score_events(
            &hyp(&[(90.0, 150.0), (150.0, 210.0)], 1000.0),
            &r,
            1000.0,
            &tol,
        );
        assert_eq!(whole.sensitivity, split.sensitivity);
    }

    #[test]
    fn fp_rate_scales_inversely_with_duration() {
        let tol = Tolerance::default();
        let h = [(500.0, 510.0)];
        let r = reference(&[(100.0, 130.0)]);
        let a = score_events(&hyp(&h, 3600.0), &r, 3600.0, &tol);
        let b = score_events(&hyp(&h, 7200.0), &r, 7200.0, &tol);
        assert!((a.fp_per_day - 2.0 * b.fp_per_day).abs() < 1e-9);
    }

    fn arb_events(dur: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0..dur, 0.5f64..120.0), 0..6).prop_map(move |v| {
            let mut iv: Vec<(f64, f64)> =
                v.into_iter().map(|(a, l)| (a, (a + l).min(dur))).collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (a, b) in iv {
                match merged.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => merged.push((a, b)),
                }
            }
            merged
        })
    }

    proptest! {
        #[test]
        fn sample_scores_match_cell_scan(h in arb_events(900.0), r in arb_events(900.0)) {
            let m = score_samples(&hyp(&h, 900.0), &reference(&r), 900.0).unwrap();
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for cell in 0..900 {
                let (lo, hi) = (cell as f64, cell as f64 + 1.0);
                let hp = h.iter().any(|&(a, b)| a < hi && b > lo);
                let rp = r.iter().any(|&(a, b)| a < hi && b > lo);
                tp += (hp && rp) as usize;
                fp += (hp && !rp) as usize;
                fn_ += (!hp && rp) as usize;
            }
            prop_assert_eq!(m.counts, SampleCounts { tp, fp, fn_ });
        }
    }
}
