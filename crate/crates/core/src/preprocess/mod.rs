//! Referential EEG → 18-channel bipolar, band-limited, 128 Hz.

pub mod fir;
pub mod montage;
pub mod resample;

use serde::{Deserialize, Serialize};

use crate::recording::Recording;
use crate::MODEL_FS;

pub use fir::{design_fir, filter_reflect, Band, FilterKind, FirFilter};
pub use montage::{impute_missing, to_bipolar, MontageSpec, DERIVATIONS};
pub use resample::{resample_to_128, Resampler};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("cannot impute {electrode}: nearest neighbours {missing:?} are missing too")]
    Unrecoverable {
        electrode: String,
        missing: Vec<String>,
    },
    #[error("electrode {0} missing from recording")]
    MissingElectrode(String),
    #[error("invalid filter band: {0}")]
    InvalidBand(String),
    #[error("recording has {samples} samples, filtering needs at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("sampling rate {fs} Hz is below 128 Hz; upsampling is not supported")]
    UpsampleUnsupported { fs: f64 },
    #[error("cannot express {fs} Hz → 128 Hz as a small rational ratio")]
    UnsupportedRatio { fs: f64 },
    #[error("not a montaged recording: {0}")]
    NotMontaged(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Maps any integer index onto `0..len` by mirroring about the edges, with
/// the edge sample repeated (`x[-1] = x[0]`, `x[len] = x[len-1]`).
pub fn reflect_index(i: i64, len: usize) -> usize {
    let n = len as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// A recording in the model's input space: the 18 bipolar derivations at
/// 128 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct MontagedRecording(Recording);

impl MontagedRecording {
    pub fn new(rec: Recording) -> Result<Self> {
        if rec.fs != MODEL_FS {
            return Err(PreprocessError::NotMontaged(format!("fs {} Hz", rec.fs)));
        }
        if rec.n_channels() != DERIVATIONS.len() {
            return Err(PreprocessError::NotMontaged(format!(
                "{} channels",
                rec.n_channels()
            )));
        }
        if rec.samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NotMontaged("non-finite samples".into()));
        }
        Ok(MontagedRecording(rec))
    }

    pub fn recording(&self) -> &Recording {
        &self.0
    }

    pub fn into_recording(self) -> Recording {
        self.0
    }
}

impl std::ops::Deref for MontagedRecording {
    type Target = Recording;

    fn deref(&self) -> &Recording {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub highpass_hz: f64,
    pub highpass_transition_hz: f64,
    pub lowpass_hz: f64,
    pub lowpass_transition_hz: f64,
    /// Power-line frequency, 50 or 60 Hz.
    pub notch_hz: f64,
    pub notch_stop_width_hz: f64,
    pub notch_transition_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            highpass_hz: 0.5,
            highpass_transition_hz: 0.5,
            lowpass_hz: 64.0,
            lowpass_transition_hz: 16.0,
            notch_hz: 50.0,
            notch_stop_width_hz: 1.0,
            notch_transition_hz: 0.5,
        }
    }
}

/// The filters applied at sampling rate `fs`, in application order.
///
/// The lowpass is skipped when its cutoff is not below the Nyquist rate, and
/// likewise the notch, since such a recording holds no energy to remove.
pub fn pipeline_filters(cfg: &PreprocessConfig, fs: f64) -> Result<Vec<FirFilter>> {
    let mut filters = vec![design_fir(
        Band::Highpass {
            cutoff_hz: cfg.highpass_hz,
        },
        cfg.highpass_transition_hz,
        fs,
    )?];
    if cfg.lowpass_hz < fs / 2.0 {
        filters.push(design_fir(
            Band::Lowpass {
                cutoff_hz: cfg.lowpass_hz,
            },
            cfg.lowpass_transition_hz,
            fs,
        )?);
    }
    if cfg.notch_hz + cfg.notch_stop_width_hz / 2.0 < fs / 2.0 {
        filters.push(design_fir(
            Band::Notch {
                center_hz: cfg.notch_hz,
                stop_width_hz: cfg.notch_stop_width_hz,
            },
            cfg.notch_transition_hz,
            fs,
        )?);
    }
    Ok(filters)
}

/// impute → bipolar montage → highpass → lowpass → notch → resample to 128 Hz.
pub fn preprocess_pipeline(rec: &Recording, cfg: &PreprocessConfig) -> Result<MontagedRecording> {
    let spec = MontageSpec::default();
    let derivation_names = spec.derivation_names();
    let mut x = if rec.channel_labels == derivation_names {
        rec.clone()
    } else {
        to_bipolar(&impute_missing(rec, &spec)?, &spec)?
    };
    for f in pipeline_filters(cfg, x.fs)? {
        x = filter_reflect(&x, &f)?;
    }
    MontagedRecording::new(resample_to_128(&x)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-9, 4), 0);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn zero_recording_stays_zero() {
        let rec = Recording::new(
            "z",
            "p",
            MontageSpec::default().derivation_names(),
            256.0,
            vec![vec![0.0; 256 * 20]; 18],
        )
        .unwrap();
        let out = preprocess_pipeline(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.fs, 128.0);
        assert_eq!(out.n_channels(), 18);
        assert_eq!(out.n_samples(), 128 * 20);
        assert!(out.samples.iter().flatten().all(|&v| v == 0.0));
    }
}
