//! Context-window transformer seizure detection for scalp EEG.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`recording`] parses EDF and raw recordings plus TSV seizure annotations.
//! * [`preprocess`] builds the 18-channel longitudinal bipolar montage, applies
//!   FIR filtering with reflective padding and resamples to 128 Hz.
//! * [`windowing`] cuts look-behind / target / look-ahead windows, labels them
//!   and draws class- and patient-balanced training epochs.
//! * [`model`] is the classifier itself with hand-written analytic gradients.
//! * [`training`] runs the epoch loop, AdamW updates and best-F1 selection.
//! * [`inference`] does overlap-averaged sliding-window prediction, event
//!   extraction and ensembling.
//! * [`scoring`] computes sample-based and event-based metrics.

pub mod inference;
pub mod linalg;
pub mod manifest;
pub mod model;
pub mod preprocess;
pub mod recording;
pub mod scoring;
pub mod training;
pub mod windowing;

pub use inference::{EventList, ProbabilityTrace};
pub use model::{ModelConfig, ModelParams};
pub use recording::{AnnotationSet, Recording};
pub use windowing::WindowSpec;

/// Seconds per day, used for false-positive rates.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Model sampling rate after preprocessing.
pub const MODEL_FS: f64 = 128.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
