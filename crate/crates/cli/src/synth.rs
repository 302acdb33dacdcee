//! Synthetic referential EEG with injected seizures.
//!
//! Background is pink noise plus a shared common-mode component and a
//! posterior alpha rhythm. A seizure is a focal 3 Hz amplitude-modulated
//! spike-wave-like burst whose amplitude falls off with distance from the
//! patient's focus, so the bipolar derivations keep it. Optional extras:
//!
//! * a narrowband precursor below seizure amplitude in the seconds before
//!   onset (pre-ictal cue),
//! * background attenuation after offset (post-ictal),
//! * artifact bursts, either unlike seizures (muscle, blinks) or built from
//!   the seizure template itself, in which case only the surrounding context
//!   tells them apart.
//!
//! Annotations are exactly the injected seizure intervals. Every random draw
//! comes from a stream derived from `seed`, recording index and electrode, so
//! output is identical for a given spec regardless of thread count.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lookaround_core::derive_seed;
use lookaround_core::manifest::{DatasetManifest, ManifestEntry, Split};
use lookaround_core::preprocess::montage::{unit_sphere, ELECTRODE_POSITIONS};
use lookaround_core::recording::{
    write_annotations, write_raw, AnnotationSet, Recording, SeizureEvent,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    /// Muscle bursts and eye blinks, spectrally unlike seizures.
    Physiological,
    /// The seizure template without cue or post-ictal change.
    SeizureLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub recordings_per_patient: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub seizures_per_hour: f64,
    pub seizure_min_s: f64,
    pub seizure_max_s: f64,
    pub seizure_freq_hz: f64,
    /// Peak burst amplitude at the focus electrode.
    pub seizure_uv: f64,
    /// Spatial falloff (chord length on the unit sphere).
    pub focus_width: f64,
    pub background_uv: f64,
    pub line_noise_uv: f64,
    pub line_freq_hz: f64,
    pub preictal_cue: bool,
    pub cue_s: f64,
    pub cue_uv: f64,
    pub cue_freq_hz: f64,
    pub postictal_s: f64,
    /// Background gain right after offset, recovering linearly to 1.
    pub postictal_gain: f64,
    pub artifact_kind: ArtifactKind,
    pub artifacts_per_hour: f64,
    pub validation_patients: usize,
    pub test_patients: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_patients: 8,
            recordings_per_patient: 1,
            duration_s: 1800.0,
            fs: 256.0,
            seizures_per_hour: 6.0,
            seizure_min_s: 20.0,
            seizure_max_s: 50.0,
            seizure_freq_hz: 3.0,
            seizure_uv: 60.0,
            focus_width: 0.6,
            background_uv: 15.0,
            line_noise_uv: 8.0,
            line_freq_hz: 50.0,
            preictal_cue: false,
            cue_s: 30.0,
            cue_uv: 40.0,
            cue_freq_hz: 8.0,
            postictal_s: 60.0,
            postictal_gain: 0.35,
            artifact_kind: ArtifactKind::Physiological,
            artifacts_per_hour: 12.0,
            validation_patients: 1,
            test_patients: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// A task where seizure-like artifacts are as frequent as seizures and
    /// only the pre-ictal cue and post-ictal attenuation separate them.
    pub fn context_task() -> Self {
        SynthSpec {
            preictal_cue: true,
            artifact_kind: ArtifactKind::SeizureLike,
            artifacts_per_hour: 6.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.recordings_per_patient == 0 {
            bail!("need at least one patient and one recording per patient");
        }
        if self.validation_patients + self.test_patients >= self.n_patients {
            bail!("validation and test patients leave no training patient");
        }
        if !(self.fs >= 128.0) || !(self.duration_s > 0.0) {
            bail!("fs must be at least 128 Hz and duration positive");
        }
        if !(self.seizure_min_s > 0.0 && self.seizure_min_s <= self.seizure_max_s) {
            bail!("invalid seizure duration range");
        }
        if self.seizures_per_hour < 0.0 || self.artifacts_per_hour < 0.0 {
            bail!("rates must be non-negative");
        }
        Ok(())
    }

    fn split_of(&self, patient: usize) -> Split {
        let train = self.n_patients - self.validation_patients - self.test_patients;
        if patient < train {
            Split::Train
        } else if patient < train + self.validation_patients {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

/// Electrodes of the montage, in [`ELECTRODE_POSITIONS`] order.
pub fn electrode_labels() -> Vec<String> {
    ELECTRODE_POSITIONS
        .iter()
        .map(|(e, _, _)| e.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BurstKind {
    Seizure,
    Artifact,
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    kind: BurstKind,
    onset_s: f64,
    duration_s: f64,
    /// Per-burst phase and modulation parameters.
    phase: f64,
    am_hz: f64,
}

/// Non-overlapping bursts. Seizures and seizure-like artifacts keep a wide
/// margin to each other and to the recording edges so their context is
/// clean; short physiological artifacts only avoid overlapping anything.
fn place_bursts(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Burst>> {
    let hours = spec.duration_s / 3600.0;
    let n_sz = (spec.seizures_per_hour * hours).round() as usize;
    let n_art = (spec.artifacts_per_hour * hours).round() as usize;
    let physiological = spec.artifact_kind == ArtifactKind::Physiological;
    let wide = |k: BurstKind| k == BurstKind::Seizure || !physiological;
    // Greedy placement can paint itself into a corner; start over if so.
    'attempt: for _ in 0..100 {
        let mut bursts: Vec<Burst> = Vec::new();
        let kinds = std::iter::repeat_n(BurstKind::Seizure, n_sz)
            .chain(std::iter::repeat_n(BurstKind::Artifact, n_art));
        for kind in kinds {
            let (margin, lo_dur, hi_dur) = if wide(kind) {
                (90.0, spec.seizure_min_s, spec.seizure_max_s)
            } else {
                (5.0, 2.0, 10.0)
            };
            let mut placed = false;
            for _ in 0..1000 {
                // Quarter-second grid keeps annotation values exact in text.
                let duration_s = (rng.random_range(lo_dur..=hi_dur) * 4.0).round() / 4.0;
                let hi = spec.duration_s - margin - duration_s;
                if hi <= margin {
                    break;
                }
                let onset_s = (rng.random_range(margin..hi) * 4.0).round() / 4.0;
                let clear = bursts.iter().all(|b| {
                    let gap = if wide(kind) && wide(b.kind) {
                        150.0
                    } else {
                        5.0
                    };
                    onset_s >= b.onset_s + b.duration_s + gap
                        || onset_s + duration_s + gap <= b.onset_s
                });
                if clear {
                    bursts.push(Burst {
                        kind,
                        onset_s,
                        duration_s,
                        phase: rng.random_range(0.0..2.0 * PI),
                        am_hz: rng.random_range(0.15..0.35),
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        bursts.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        return Ok(bursts);
    }
    bail!(
        "cannot fit {n_sz} seizures and {n_art} artifacts into {} s",
        spec.duration_s
    )
}

/// Pink noise through a fixed bank of first-order sections (Kellet's
/// refined filter), scaled to unit RMS.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = StandardNormal.sample(rng);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b.iter().sum::<f64>() + w * 0.5362);
        b[6] = w * 0.115926;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Spike-wave-like periodic waveform with unit peak fundamental.
fn spike_wave(phase: f64) -> f64 {
    phase.sin() + 0.45 * (2.0 * phase).sin() + 0.2 * (3.0 * phase).sin()
}

/// Raised-cosine ramps of `ramp` seconds at both ends of `[0, len)`.
fn envelope(t: f64, len: f64, ramp: f64) -> f64 {
    let r = ramp.min(len / 2.0);
    if t < 0.0 || t >= len {
        0.0
    } else if t < r {
        0.5 - 0.5 * (PI * t / r).cos()
    } else if t > len - r {
        0.5 - 0.5 * (PI * (len - t) / r).cos()
    } else {
        1.0
    }
}

fn chord(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One referential recording and its annotations.
pub fn generate_recording(
    spec: &SynthSpec,
    patient: usize,
    index: usize,
) -> Result<(Recording, AnnotationSet)> {
    let id = format!("p{patient:02}_r{index:02}");
    let rec_seed = derive_seed(derive_seed(spec.seed, patient as u64), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);
    let bursts = place_bursts(spec, &mut rng)?;

    let positions: Vec<[f64; 3]> = ELECTRODE_POSITIONS
        .iter()
        .map(|&(_, az, r)| unit_sphere(az, r))
        .collect();
    // One focus per patient, shared by seizure-like artifacts so topography
    // cannot tell them apart.
    let mut patient_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(spec.seed ^ 0x5eed, patient as u64));
    let focus = patient_rng.random_range(0..positions.len());
    let gain = |f: usize, e: usize| {
        let d = chord(positions[f], positions[e]);
        (-(d * d) / (2.0 * spec.focus_width * spec.focus_width)).exp()
    };

    let fs = spec.fs;
    let n = (spec.duration_s * fs).round() as usize;
    let shared = pink_noise(
        n,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(rec_seed, 1000)),
    );
    let alpha_phase = rng.random_range(0.0..2.0 * PI);
    let line_phase = rng.random_range(0.0..2.0 * PI);

    // Background gain over time: post-ictal dips after seizures only.
    let mut bg_gain = vec![1.0; n];
    if spec.postictal_s > 0.0 {
        for b in bursts.iter().filter(|b| b.kind == BurstKind::Seizure) {
            let end = b.onset_s + b.duration_s;
            let first = (end * fs).ceil() as usize;
            let last = (((end + spec.postictal_s) * fs).ceil() as usize).min(n);
            for (i, g) in bg_gain.iter_mut().enumerate().take(last).skip(first) {
                let u = (i as f64 / fs - end) / spec.postictal_s;
                *g = spec.postictal_gain + (1.0 - spec.postictal_gain) * u;
            }
        }
    }

    let labels = electrode_labels();
    let rows: Vec<Vec<f64>> = (0..labels.len())
        .into_par_iter()
        .map(|e| {
            let mut erng = ChaCha8Rng::seed_from_u64(derive_seed(rec_seed, e as u64));
            let own = pink_noise(n, &mut erng);
            let posterior = matches!(labels[e].as_str(), "O1" | "O2" | "P3" | "P4" | "Pz");
            let mut row: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let mut v = spec.background_uv * (0.8 * own[i] + 0.6 * shared[i]);
                    if posterior {
                        v += 0.5
                            * spec.background_uv
                            * (2.0 * PI * 10.0 * t + alpha_phase).sin()
                            * (0.6 + 0.4 * (2.0 * PI * 0.05 * t).sin());
                    }
                    v * bg_gain[i]
                        + spec.line_noise_uv * (2.0 * PI * spec.line_freq_hz * t + line_phase).sin()
                })
                .collect();
            for b in &bursts {
                match (b.kind, spec.artifact_kind) {
                    (BurstKind::Seizure, _) | (BurstKind::Artifact, ArtifactKind::SeizureLike) => {
                        add_burst(&mut row, spec, b, gain(focus, e));
                        if b.kind == BurstKind::Seizure && spec.preictal_cue {
                            add_cue(&mut row, spec, b, gain(focus, e));
                        }
                    }
                    (BurstKind::Artifact, ArtifactKind::Physiological) => {
                        add_physiological(&mut row, spec, b, &labels[e], &mut erng);
                    }
                }
            }
            row
        })
        .collect();

    let rec = Recording::new(&id, format!("p{patient:02}"), labels, fs, rows)?;
    let events = bursts
        .iter()
        .filter(|b| b.kind == BurstKind::Seizure)
        .map(|b| SeizureEvent::seizure(b.onset_s, b.duration_s));
    Ok((rec, AnnotationSet::from_events(id, events)))
}

fn add_burst(row: &mut [f64], spec: &SynthSpec, b: &Burst, gain: f64) {
    let fs = spec.fs;
    let first = (b.onset_s * fs).ceil() as usize;
    let last = (((b.onset_s + b.duration_s) * fs).ceil() as usize).min(row.len());
    for (i, v) in row.iter_mut().enumerate().take(last).skip(first) {
        let t = i as f64 / fs - b.onset_s;
        // Frequency glides down slightly over the seizure, as ictal rhythms do.
        let f = spec.seizure_freq_hz * (1.0 - 0.15 * t / b.duration_s);
        let phase = 2.0 * PI * f * t + b.phase;
        let am = 0.75 + 0.25 * (2.0 * PI * b.am_hz * t).sin();
        *v += spec.seizure_uv * gain * am * envelope(t, b.duration_s, 3.0) * spike_wave(phase);
    }
}

fn add_cue(row: &mut [f64], spec: &SynthSpec, b: &Burst, gain: f64) {
    let fs = spec.fs;
    let start = (b.onset_s - spec.cue_s).max(0.0);
    let first = (start * fs).ceil() as usize;
    let last = ((b.onset_s * fs).ceil() as usize).min(row.len());
    for (i, v) in row.iter_mut().enumerate().take(last).skip(first) {
        let t = i as f64 / fs - start;
        *v += spec.cue_uv
            * gain
            * envelope(t, b.onset_s - start, 2.0)
            * (2.0 * PI * spec.cue_freq_hz * t + b.phase).sin();
    }
}

/// Muscle bursts on temporal electrodes and blinks on frontopolar ones.
fn add_physiological(
    row: &mut [f64],
    spec: &SynthSpec,
    b: &Burst,
    label: &str,
    rng: &mut ChaCha8Rng,
) {
    let fs = spec.fs;
    let first = (b.onset_s * fs).ceil() as usize;
    let last = (((b.onset_s + b.duration_s) * fs).ceil() as usize).min(row.len());
    let temporal = matches!(label, "T3" | "T4" | "T5" | "T6" | "F7" | "F8");
    let frontal = matches!(label, "Fp1" | "Fp2");
    let mut prev = 0.0;
    for (i, v) in row.iter_mut().enumerate().take(last).skip(first) {
        let t = i as f64 / fs - b.onset_s;
        let w: f64 = StandardNormal.sample(rng);
        if temporal {
            // First difference of white noise: energy concentrated high up.
            *v += 2.0 * spec.background_uv * envelope(t, b.duration_s, 0.5) * (w - prev);
        }
        if frontal {
            let within = t % 1.5;
            *v += 6.0 * spec.background_uv * (-(within - 0.3).powi(2) / (2.0 * 0.08 * 0.08)).exp();
        }
        prev = w;
    }
}

/// Writes recordings, annotation TSVs and `manifest.json` under `out`.
/// Returns the manifest path.
pub fn write_corpus(spec: &SynthSpec, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let rec_dir = out.join("recordings");
    std::fs::create_dir_all(&rec_dir).with_context(|| format!("creating {}", rec_dir.display()))?;
    let jobs: Vec<(usize, usize)> = (0..spec.n_patients)
        .flat_map(|p| (0..spec.recordings_per_patient).map(move |r| (p, r)))
        .collect();
    let entries = jobs
        .iter()
        .map(|&(p, r)| {
            let (rec, ann) = generate_recording(spec, p, r)?;
            let base = rec_dir.join(&rec.id);
            write_raw(&rec, &base)?;
            let tsv = rec_dir.join(format!("{}.tsv", rec.id));
            write_annotations(&ann, &tsv)?;
            Ok(ManifestEntry {
                id: rec.id.clone(),
                patient_id: rec.patient_id.clone(),
                path: PathBuf::from("recordings").join(format!("{}.json", rec.id)),
                annotations: Some(PathBuf::from("recordings").join(format!("{}.tsv", rec.id))),
                split: spec.split_of(p),
                long_form: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(entries, out);
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
