//! EEG recordings and seizure annotations.
//!
//! Three on-disk formats are understood: continuous EDF (see [`edf`]), a raw
//! little-endian `f32` payload with a JSON sidecar (see [`raw`]) and the
//! tab-separated annotation files described in [`annotations`].

pub mod annotations;
pub mod edf;
pub mod labels;
pub mod raw;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use annotations::{
    read_annotations, write_annotations, AnnotationSet, EventLabel, SeizureEvent,
};
pub use edf::{read_edf, write_edf};
pub use raw::{read_raw, write_raw};

#[derive(Debug, thiserror::Error)]
pub enum RecordingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("EEG signals disagree on sampling rate ({first} Hz vs {other} Hz)")]
    MixedSamplingRates { first: f64, other: f64 },
    #[error("EDF data truncated: header claims {expected} bytes of records, file holds {actual}")]
    TruncatedRecord { expected: u64, actual: u64 },
    #[error("raw payload holds {actual} bytes but header declares {expected}")]
    HeaderPayloadMismatch { expected: u64, actual: u64 },
    #[error("invalid raw header: {0}")]
    InvalidRawHeader(String),
    #[error(
        "annotation row {row}: event [{onset}, {end}) s lies outside the {duration} s recording"
    )]
    OutOfBounds {
        row: usize,
        onset: f64,
        end: f64,
        duration: f64,
    },
    #[error("annotation row {row}: duration {duration} is not positive")]
    NegativeDuration { row: usize, duration: f64 },
    #[error("annotation file {path}: {message}")]
    MalformedAnnotations { path: PathBuf, message: String },
    #[error("invalid recording: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, RecordingError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> RecordingError + '_ {
    move |source| RecordingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A multichannel EEG recording in microvolts.
///
/// Rows of `samples` are channels in `channel_labels` order; every row has the
/// same length and only finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub patient_id: String,
    pub channel_labels: Vec<String>,
    pub fs: f64,
    pub samples: Vec<Vec<f64>>,
}

impl Recording {
    /// Builds a recording after checking the structural invariants.
    pub fn new(
        id: impl Into<String>,
        patient_id: impl Into<String>,
        channel_labels: Vec<String>,
        fs: f64,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let rec = Recording {
            id: id.into(),
            patient_id: patient_id.into(),
            channel_labels,
            fs,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(RecordingError::Invalid(format!(
                "sampling rate {} is not positive",
                self.fs
            )));
        }
        if self.channel_labels.len() != self.samples.len() {
            return Err(RecordingError::Invalid(format!(
                "{} labels for {} channels",
                self.channel_labels.len(),
                self.samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &self.channel_labels {
            if !seen.insert(label.as_str()) {
                return Err(RecordingError::Invalid(format!(
                    "duplicate channel {label}"
                )));
            }
        }
        let n = self.n_samples();
        for (label, row) in self.channel_labels.iter().zip(&self.samples) {
            if row.len() != n {
                return Err(RecordingError::Invalid(format!(
                    "channel {label} has {} samples, expected {n}",
                    row.len()
                )));
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(RecordingError::Invalid(format!(
                    "channel {label} sample {i} is not finite"
                )));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.channel_index(label)
            .map(|i| self.samples[i].as_slice())
    }

    /// Replaces the sample matrix, keeping identity fields.
    pub fn with_samples(
        &self,
        channel_labels: Vec<String>,
        fs: f64,
        samples: Vec<Vec<f64>>,
    ) -> Recording {
        Recording {
            id: self.id.clone(),
            patient_id: self.patient_id.clone(),
            channel_labels,
            fs,
            samples,
        }
    }
}
