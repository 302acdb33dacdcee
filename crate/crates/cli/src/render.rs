//! Timeline figure of detections against reference seizures.
//!
//! One lane per patient, recordings laid end to end. Reference seizures are
//! drawn green when some detection overlaps them (with the scoring
//! tolerance) and red when missed; detections that overlap no reference
//! seizure are drawn orange above the lane. Only `rect`, `line` and `text`
//! elements are emitted.

use std::collections::BTreeMap;
use std::fmt::Write;

use lookaround_core::recording::AnnotationSet;
use lookaround_core::scoring::Tolerance;

pub const DETECTED: &str = "#2e9e44";
pub const MISSED: &str = "#d62728";
pub const FALSE: &str = "#ff9f1c";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("hypothesis and reference cover different recordings (only in hypothesis: {only_hyp:?}; only in reference: {only_ref:?})")]
    MismatchedRecordings {
        only_hyp: Vec<String>,
        only_ref: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRecording {
    pub patient_id: String,
    pub duration_s: f64,
    pub annotations: AnnotationSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkKind {
    Detected,
    Missed,
    False,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    pub kind: MarkKind,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub patient_id: String,
    pub duration_s: f64,
    /// Offsets where a new recording starts, after the first.
    pub boundaries: Vec<f64>,
    pub marks: Vec<Mark>,
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Marks of one recording, in its own time base.
pub fn classify(hyp: &[(f64, f64)], reference: &[(f64, f64)], tol: &Tolerance) -> Vec<Mark> {
    let widened: Vec<(f64, f64)> = reference
        .iter()
        .map(|&(a, b)| (a - tol.pre_s, b + tol.post_s))
        .collect();
    let mut marks: Vec<Mark> = reference
        .iter()
        .zip(&widened)
        .map(|(&(a, b), &w)| Mark {
            kind: if hyp.iter().any(|&h| overlaps(h, w)) {
                MarkKind::Detected
            } else {
                MarkKind::Missed
            },
            start_s: a,
            end_s: b,
        })
        .collect();
    marks.extend(
        hyp.iter()
            .filter(|&&h| !widened.iter().any(|&w| overlaps(h, w)))
            .map(|&(a, b)| Mark {
                kind: MarkKind::False,
                start_s: a,
                end_s: b,
            }),
    );
    marks
}

/// Pairs hypothesis and reference sets by recording id and groups them into
/// patient lanes. Both sides must name exactly the same recordings.
pub fn build_lanes(
    hypothesis: &BTreeMap<String, AnnotationSet>,
    reference: &BTreeMap<String, ReferenceRecording>,
    tol: &Tolerance,
) -> Result<Vec<Lane>, RenderError> {
    let only_hyp: Vec<String> = hypothesis
        .keys()
        .filter(|k| !reference.contains_key(*k))
        .cloned()
        .collect();
    let only_ref: Vec<String> = reference
        .keys()
        .filter(|k| !hypothesis.contains_key(*k))
        .cloned()
        .collect();
    if !only_hyp.is_empty() || !only_ref.is_empty() {
        return Err(RenderError::MismatchedRecordings { only_hyp, only_ref });
    }
    let mut lanes: BTreeMap<&str, Lane> = BTreeMap::new();
    for (id, r) in reference {
        let lane = lanes.entry(&r.patient_id).or_insert_with(|| Lane {
            patient_id: r.patient_id.clone(),
            duration_s: 0.0,
            boundaries: Vec::new(),
            marks: Vec::new(),
        });
        let offset = lane.duration_s;
        if offset > 0.0 {
            lane.boundaries.push(offset);
        }
        for m in classify(&hypothesis[id].intervals(), &r.annotations.intervals(), tol) {
            lane.marks.push(Mark {
                start_s: m.start_s + offset,
                end_s: m.end_s + offset,
                ..m
            });
        }
        lane.duration_s += r.duration_s;
    }
    Ok(lanes.into_values().collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG document of `lanes`, all drawn to the scale of the longest one.
pub fn render_svg(lanes: &[Lane]) -> String {
    const WIDTH: f64 = 1000.0;
    const LEFT: f64 = 90.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const LANE: f64 = 36.0;
    let plot = WIDTH - LEFT - RIGHT;
    let longest = lanes
        .iter()
        .map(|l| l.duration_s)
        .fold(0.0f64, f64::max)
        .max(1.0);
    let x = |t: f64| LEFT + plot * t / longest;
    let height = TOP + LANE * lanes.len() as f64 + 40.0;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"#
    )
    .unwrap();
    for (i, (label, colour)) in [("detected", DETECTED), ("missed", MISSED), ("false", FALSE)]
        .iter()
        .enumerate()
    {
        let lx = LEFT + 110.0 * i as f64;
        writeln!(
            s,
            r#"<rect x="{lx}" y="12" width="12" height="12" fill="{colour}"/>"#
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="22" font-family="sans-serif" font-size="12">{label}</text>"#,
            lx + 16.0
        )
        .unwrap();
    }
    for (i, lane) in lanes.iter().enumerate() {
        let y = TOP + LANE * i as f64 + LANE / 2.0;
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            escape(&lane.patient_id)
        )
        .unwrap();
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#888" stroke-width="1"/>"##,
            x(lane.duration_s)
        )
        .unwrap();
        for &b in &lane.boundaries {
            writeln!(
                s,
                r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#bbb" stroke-width="1"/>"##,
                x(b),
                y - 8.0,
                y + 8.0
            )
            .unwrap();
        }
        for m in &lane.marks {
            let (colour, top, h) = match m.kind {
                MarkKind::Detected => (DETECTED, y - 6.0, 12.0),
                MarkKind::Missed => (MISSED, y - 6.0, 12.0),
                MarkKind::False => (FALSE, y - 14.0, 6.0),
            };
            // Keep short events visible at any scale.
            let w = (x(m.end_s) - x(m.start_s)).max(1.5);
            writeln!(
                s,
                r#"<rect class="{:?}" x="{:.3}" y="{top}" width="{w:.3}" height="{h}" fill="{colour}"/>"#,
                m.kind,
                x(m.start_s)
            )
            .unwrap();
        }
    }
    let axis_y = TOP + LANE * lanes.len() as f64 + 10.0;
    writeln!(s, r##"<line x1="{LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="#000" stroke-width="1"/>"##, LEFT + plot).unwrap();
    let hours = longest / 3600.0;
    let step = if hours > 12.0 {
        6.0
    } else if hours > 3.0 {
        1.0
    } else {
        0.25
    };
    let mut h = 0.0;
    while h * 3600.0 <= longest + 1e-9 {
        let tx = x(h * 3600.0);
        writeln!(
            s,
            r##"<line x1="{tx}" y1="{axis_y}" x2="{tx}" y2="{}" stroke="#000" stroke-width="1"/>"##,
            axis_y + 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{tx}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{h} h</text>"#,
            axis_y + 16.0
        )
        .unwrap();
        h += step;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use lookaround_core::recording::SeizureEvent;

    fn set(id: &str, iv: &[(f64, f64)]) -> AnnotationSet {
        AnnotationSet::from_events(id, iv.iter().map(|&(a, b)| SeizureEvent::seizure(a, b - a)))
    }

    fn reference() -> BTreeMap<String, ReferenceRecording> {
        [
            ("a", "p1", vec![(100.0, 150.0), (900.0, 960.0)]),
            ("b", "p1", vec![(50.0, 80.0)]),
            ("c", "p2", vec![]),
        ]
        .into_iter()
        .map(|(id, p, iv)| {
            (
                id.to_string(),
                ReferenceRecording {
                    patient_id: p.into(),
                    duration_s: 1800.0,
                    annotations: set(id, &iv),
                },
            )
        })
        .collect()
    }

    fn hyp_from(r: &BTreeMap<String, ReferenceRecording>) -> BTreeMap<String, AnnotationSet> {
        r.iter()
            .map(|(k, v)| (k.clone(), v.annotations.clone()))
            .collect()
    }

    #[test]
    fn identical_sets_have_only_detections() {
        let r = reference();
        let lanes = build_lanes(&hyp_from(&r), &r, &Tolerance::default()).unwrap();
        assert_eq!(lanes.len(), 2);
        assert_eq!(lanes[0].duration_s, 3600.0);
        assert_eq!(lanes[0].boundaries, vec![1800.0]);
        let kinds: Vec<MarkKind> = lanes
            .iter()
            .flat_map(|l| l.marks.iter().map(|m| m.kind))
            .collect();
        assert_eq!(kinds, vec![MarkKind::Detected; 3]);
        assert_eq!(lanes[0].marks[2].start_s, 1850.0);
        let svg = render_svg(&lanes);
        assert_eq!(svg.matches("class=\"Detected\"").count(), 3);
        assert_eq!(svg.matches("class=\"Missed\"").count(), 0);
        assert_eq!(svg.matches("class=\"False\"").count(), 0);
    }

    #[test]
    fn empty_hypothesis_marks_every_seizure_missed() {
        let r = reference();
        let hyp = r
            .keys()
            .map(|k| (k.clone(), AnnotationSet::empty(k.clone())))
            .collect();
        let lanes = build_lanes(&hyp, &r, &Tolerance::default()).unwrap();
        let svg = render_svg(&lanes);
        assert_eq!(svg.matches("class=\"Missed\"").count(), 3);
        assert_eq!(
            svg.matches("class=\"Detected\"").count() + svg.matches("class=\"False\"").count(),
            0
        );
    }

    #[test]
    fn false_alarms_and_tolerance() {
        let tol = Tolerance::default();
        let marks = classify(&[(160.0, 170.0), (600.0, 610.0)], &[(100.0, 150.0)], &tol);
        assert_eq!(
            marks,
            vec![
                Mark {
                    kind: MarkKind::Detected,
                    start_s: 100.0,
                    end_s: 150.0
                },
                Mark {
                    kind: MarkKind::False,
                    start_s: 600.0,
                    end_s: 610.0
                },
            ]
        );
    }

    #[test]
    fn mismatched_sets_rejected() {
        let r = reference();
        let mut hyp = hyp_from(&r);
        hyp.remove("b");
        hyp.insert("z".into(), AnnotationSet::empty("z"));
        match build_lanes(&hyp, &r, &Tolerance::default()) {
            Err(RenderError::MismatchedRecordings { only_hyp, only_ref }) => {
                assert_eq!(only_hyp, vec!["z"]);
                assert_eq!(only_ref, vec!["b"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn only_permitted_elements() {
        let r = reference();
        let hyp = [
            ("a", vec![(300.0, 320.0)]),
            ("b", vec![]),
            ("c", vec![(5.0, 9.0)]),
        ]
        .into_iter()
        .map(|(k, iv)| (k.to_string(), set(k, &iv)))
        .collect();
        let svg = render_svg(&build_lanes(&hyp, &r, &Tolerance::default()).unwrap());
        let mut rest = svg.as_str();
        while let Some(i) = rest.find('<') {
            rest = &rest[i + 1..];
            let name: String = rest
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '/')
                .collect();
            assert!(
                ["svg", "/svg", "rect", "line", "text", "/text"].contains(&name.as_str()),
                "element {name}"
            );
        }
    }
}
