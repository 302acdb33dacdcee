//! Seizure annotations stored as TSV with the columns
//! `onset`, `duration` and `eventType`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Recording, RecordingError, Result};

/// Slack allowed when comparing decimal-text boundaries to the recording end.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventLabel {
    Seizure,
    Background,
}

impl EventLabel {
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim().to_ascii_lowercase();
        if t == "sz" || t == "seizure" || t.starts_with("sz_") {
            Some(EventLabel::Seizure)
        } else if t == "bckg" || t == "background" || t == "bg" {
            Some(EventLabel::Background)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub label: EventLabel,
}

impl SeizureEvent {
    pub fn seizure(onset_s: f64, duration_s: f64) -> Self {
        SeizureEvent {
            onset_s,
            duration_s,
            label: EventLabel::Seizure,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// Normalised seizure annotations of one recording: seizure events only,
/// sorted by onset, with overlapping or touching intervals merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub recording_id: String,
    pub events: Vec<SeizureEvent>,
}

impl AnnotationSet {
    /// Normalises arbitrary rows: background rows are discarded and seizure
    /// rows merged.
    pub fn from_events(
        recording_id: impl Into<String>,
        events: impl IntoIterator<Item = SeizureEvent>,
    ) -> Self {
        let mut intervals: Vec<(f64, f64)> = events
            .into_iter()
            .filter(|e| e.label == EventLabel::Seizure)
            .map(|e| (e.onset_s, e.end_s()))
            .collect();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (start, end) in intervals {
            match merged.last_mut() {
                Some(last) if start <= last.1 => last.1 = last.1.max(end),
                _ => merged.push((start, end)),
            }
        }
        AnnotationSet {
            recording_id: recording_id.into(),
            events: merged
                .into_iter()
                .map(|(s, e)| SeizureEvent::seizure(s, e - s))
                .collect(),
        }
    }

    pub fn empty(recording_id: impl Into<String>) -> Self {
        AnnotationSet {
            recording_id: recording_id.into(),
            events: Vec::new(),
        }
    }

    /// Seizure intervals as `(start, end)` seconds.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.events.iter().map(|e| (e.onset_s, e.end_s())).collect()
    }
}

/// Parses annotation TSV text against a recording of `duration_s` seconds.
pub fn parse_annotations(
    text: &str,
    recording_id: &str,
    duration_s: f64,
    path: &Path,
) -> Result<AnnotationSet> {
    let malformed = |message: String| RecordingError::MalformedAnnotations {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(malformed("missing header row".into()));
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| {
        columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .ok_or_else(|| malformed(format!("missing column {name:?}")))
    };
    let (onset_col, duration_col, type_col) = (col("onset")?, col("duration")?, col("eventType")?);

    let mut events = Vec::new();
    for (line_no, line) in lines {
        let row = line_no + 1;
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        let cell = |i: usize| {
            cells
                .get(i)
                .copied()
                .ok_or_else(|| malformed(format!("row {row}: too few columns")))
        };
        let number = |i: usize| -> Result<f64> {
            let text = cell(i)?;
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("row {row}: bad number {text:?}")))
        };
        let onset = number(onset_col)?;
        let duration = number(duration_col)?;
        let label = EventLabel::parse(cell(type_col)?).ok_or_else(|| {
            malformed(format!(
                "row {row}: unknown event type {:?}",
                cells[type_col]
            ))
        })?;
        if duration <= 0.0 {
            return Err(RecordingError::NegativeDuration { row, duration });
        }
        if onset < 0.0 || onset + duration > duration_s + BOUNDARY_EPS {
            return Err(RecordingError::OutOfBounds {
                row,
                onset,
                end: onset + duration,
                duration: duration_s,
            });
        }
        events.push(SeizureEvent {
            onset_s: onset,
            duration_s: duration,
            label,
        });
    }
    Ok(AnnotationSet::from_events(recording_id, events))
}

pub fn read_annotations(path: &Path, rec: &Recording) -> Result<AnnotationSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text, &rec.id, rec.duration_s(), path)
}

pub fn format_annotations(set: &AnnotationSet) -> String {
    let mut out = String::from("onset\tduration\teventType\n");
    for e in &set.events {
        let tag = match e.label {
            EventLabel::Seizure => "sz",
            EventLabel::Background => "bckg",
        };
        out.push_str(&format!("{}\t{}\t{tag}\n", e.onset_s, e.duration_s));
    }
    out
}

pub fn write_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    fs::write(path, format_annotations(set)).map_err(io_err(path))
}
