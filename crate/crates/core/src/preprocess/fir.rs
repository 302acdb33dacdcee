//! Windowed-sinc FIR design (Hamming window) and zero-phase application with
//! reflective boundary padding.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::recording::Recording;

use super::{reflect_index, PreprocessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Highpass,
    Lowpass,
    Notch,
}

/// Band specification. Cutoffs are the −6 dB points of the windowed sinc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    Highpass {
        cutoff_hz: f64,
    },
    Lowpass {
        cutoff_hz: f64,
    },
    /// Band-stop centred on `center_hz` whose −6 dB edges are `stop_width_hz` apart.
    Notch {
        center_hz: f64,
        stop_width_hz: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub kind: FilterKind,
    pub cutoffs_hz: Vec<f64>,
    pub transition_hz: f64,
    pub fs: f64,
}

/// Odd tap count giving a Hamming-window transition of `transition_hz`.
pub fn hamming_length(transition_hz: f64, fs: f64) -> usize {
    let n = (3.3 * fs / transition_hz).ceil() as usize;
    n | 1
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Unit-DC-gain windowed-sinc lowpass of odd length `n`.
fn lowpass_taps(cutoff_hz: f64, fs: f64, n: usize) -> Vec<f64> {
    let fc = cutoff_hz / fs;
    let center = (n / 2) as f64;
    let mut taps: Vec<f64> = hamming(n)
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - center;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            w * sinc
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    symmetrize(&mut taps);
    taps
}

/// Copies the right half onto the left so the taps are exactly symmetric.
fn symmetrize(taps: &mut [f64]) {
    let n = taps.len();
    for i in 0..n / 2 {
        taps[i] = taps[n - 1 - i];
    }
}

/// `δ − taps`, with the centre tap chosen so the DC gain is exactly zero.
fn spectral_inverse(taps: &[f64]) -> Vec<f64> {
    let c = taps.len() / 2;
    let mut out: Vec<f64> = taps.iter().map(|t| -t).collect();
    out[c] = -2.0 * half_sum(&out);
    out
}

/// `Σ taps[c+1..]` in a fixed order; the DC gain of a symmetric filter is
/// `taps[c] + 2·half_sum`.
fn half_sum(taps: &[f64]) -> f64 {
    taps[taps.len() / 2 + 1..].iter().sum()
}

pub fn design_fir(band: Band, transition_hz: f64, fs: f64) -> Result<FirFilter> {
    let nyquist = fs / 2.0;
    let in_band = |f: f64| f > 0.0 && f < nyquist;
    if !(transition_hz > 0.0 && fs > 0.0) {
        return Err(PreprocessError::InvalidBand(format!(
            "transition {transition_hz} Hz at fs {fs} Hz"
        )));
    }
    let n = hamming_length(transition_hz, fs);
    match band {
        Band::Lowpass { cutoff_hz } => {
            if !in_band(cutoff_hz) {
                return Err(PreprocessError::InvalidBand(format!(
                    "lowpass cutoff {cutoff_hz} Hz at fs {fs} Hz"
                )));
            }
            Ok(FirFilter {
                taps: lowpass_taps(cutoff_hz, fs, n),
                kind: FilterKind::Lowpass,
                cutoffs_hz: vec![cutoff_hz],
                transition_hz,
                fs,
            })
        }
        Band::Highpass { cutoff_hz } => {
            if !in_band(cutoff_hz) {
                return Err(PreprocessError::InvalidBand(format!(
                    "highpass cutoff {cutoff_hz} Hz at fs {fs} Hz"
                )));
            }
            Ok(FirFilter {
                taps: spectral_inverse(&lowpass_taps(cutoff_hz, fs, n)),
                kind: FilterKind::Highpass,
                cutoffs_hz: vec![cutoff_hz],
                transition_hz,
                fs,
            })
        }
        Band::Notch {
            center_hz,
            stop_width_hz,
        } => {
            let (lo, hi) = (
                center_hz - stop_width_hz / 2.0,
                center_hz + stop_width_hz / 2.0,
            );
            if !(stop_width_hz > 0.0 && in_band(lo) && in_band(hi)) {
                return Err(PreprocessError::InvalidBand(format!(
                    "notch {center_hz} Hz (width {stop_width_hz} Hz) at fs {fs} Hz"
                )));
            }
            let upper = lowpass_taps(hi, fs, n);
            let lower = lowpass_taps(lo, fs, n);
            let c = n / 2;
            let mut taps: Vec<f64> = upper.iter().zip(&lower).map(|(u, l)| -(u - l)).collect();
            taps[c] += 1.0;
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            symmetrize(&mut taps);
            Ok(FirFilter {
                taps,
                kind: FilterKind::Notch,
                cutoffs_hz: vec![lo, hi],
                transition_hz,
                fs,
            })
        }
    }
}

impl FirFilter {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|i| self.taps[i] == self.taps[n - 1 - i])
    }

    /// DC gain evaluated in the symmetric order; exactly `0.0` for highpass
    /// designs.
    pub fn dc_gain(&self) -> f64 {
        self.taps[self.taps.len() / 2] + 2.0 * half_sum(&self.taps)
    }

    /// Zero-phase magnitude response at `freq_hz` (the DFT of the taps about
    /// their centre, which is real for symmetric taps).
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        let c = self.taps.len() / 2;
        let w = 2.0 * PI * freq_hz / self.fs;
        self.taps
            .iter()
            .enumerate()
            .map(|(i, t)| t * (w * (i as f64 - c as f64)).cos())
            .sum()
    }
}

/// Applies `f` to every channel. Each channel is extended by `(len−1)/2`
/// mirrored samples at both ends and convolved with the taps, so the output
/// has the input's length and timebase.
pub fn filter_reflect(rec: &Recording, f: &FirFilter) -> Result<Recording> {
    if rec.n_samples() <= f.len() {
        return Err(PreprocessError::TooShort {
            samples: rec.n_samples(),
            needed: f.len() + 1,
        });
    }
    let conv = Convolver::new(&f.taps);
    let samples = rec
        .samples
        .par_iter()
        .map(|row| conv.apply_reflect(row))
        .collect();
    Ok(rec.with_samples(rec.channel_labels.clone(), rec.fs, samples))
}

/// Length of the FFT blocks used for long kernels.
fn block_len(kernel: usize) -> usize {
    (4 * kernel).next_power_of_two().max(1024)
}

/// Cross-correlation of a signal with a fixed kernel (convolution, for
/// symmetric kernels), using overlap-save FFT blocks for long kernels.
pub struct Convolver {
    taps: Vec<f64>,
    fft: Option<FftKernel>,
}

struct FftKernel {
    size: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

const DIRECT_MAX_TAPS: usize = 64;

impl Convolver {
    pub fn new(taps: &[f64]) -> Self {
        let fft = (taps.len() > DIRECT_MAX_TAPS).then(|| {
            let size = block_len(taps.len());
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(size);
            let inverse = planner.plan_fft_inverse(size);
            // Correlation with h is convolution with reversed h.
            let mut spectrum = vec![Complex::new(0.0, 0.0); size];
            for (i, &t) in taps.iter().rev().enumerate() {
                spectrum[i].re = t;
            }
            forward.process(&mut spectrum);
            FftKernel {
                size,
                spectrum,
                forward,
                inverse,
            }
        });
        Convolver {
            taps: taps.to_vec(),
            fft,
        }
    }

    /// `y[i] = Σ_k taps[k]·x[i + k]` for every `i` with a full window.
    pub fn valid(&self, x: &[f64]) -> Vec<f64> {
        let k = self.taps.len();
        if x.len() < k {
            return Vec::new();
        }
        let n_out = x.len() - k + 1;
        match &self.fft {
            None => (0..n_out)
                .map(|i| self.taps.iter().zip(&x[i..i + k]).map(|(t, v)| t * v).sum())
                .collect(),
            Some(kernel) => {
                let step = kernel.size - k + 1;
                let scale = 1.0 / kernel.size as f64;
                let mut out = Vec::with_capacity(n_out);
                let mut buf = vec![Complex::new(0.0, 0.0); kernel.size];
                let mut start = 0;
                while start < n_out {
                    for (j, slot) in buf.iter_mut().enumerate() {
                        *slot = Complex::new(x.get(start + j).copied().unwrap_or(0.0), 0.0);
                    }
                    kernel.forward.process(&mut buf);
                    for (b, s) in buf.iter_mut().zip(&kernel.spectrum) {
                        *b *= s;
                    }
                    kernel.inverse.process(&mut buf);
                    let take = step.min(n_out - start);
                    out.extend(buf[k - 1..k - 1 + take].iter().map(|c| c.re * scale));
                    start += take;
                }
                out
            }
        }
    }

    /// Same-length output with mirrored padding of `(len−1)/2` samples.
    pub fn apply_reflect(&self, x: &[f64]) -> Vec<f64> {
        let half = self.taps.len() / 2;
        let n = x.len() as i64;
        let padded: Vec<f64> = (-(half as i64)..n + half as i64)
            .map(|i| x[reflect_index(i, x.len())])
            .collect();
        self.valid(&padded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(gain: f64) -> f64 {
        20.0 * gain.abs().log10()
    }

    #[test]
    fn highpass_has_exact_zero_dc() {
        let f = design_fir(Band::Highpass { cutoff_hz: 0.5 }, 0.5, 256.0).unwrap();
        assert_eq!(f.dc_gain(), 0.0);
        assert!(f.taps.iter().sum::<f64>().abs() < 1e-9);
        assert!(f.is_symmetric());
        assert!(f.len() % 2 == 1);
        assert!((f.gain_at(2.0) - 1.0).abs() < 0.05);
        // one transition width beyond the cutoff is DC itself
        assert!(db(f.gain_at(0.0)) < -40.0 || f.gain_at(0.0) == 0.0);
    }

    #[test]
    fn lowpass_passband_and_stopband() {
        let f = design_fir(Band::Lowpass { cutoff_hz: 64.0 }, 16.0, 256.0).unwrap();
        assert!((f.taps.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((f.gain_at(10.0) - 1.0).abs() < 0.05);
        assert!(db(f.gain_at(80.0)) <= -40.0);
        assert!(f.is_symmetric());
    }

    #[test]
    fn notch_attenuates_centre() {
        for (center, fs) in [(50.0, 256.0), (60.0, 256.0), (50.0, 500.0)] {
            let f = design_fir(
                Band::Notch {
                    center_hz: center,
                    stop_width_hz: 1.0,
                },
                0.5,
                fs,
            )
            .unwrap();
            assert!((f.taps.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(db(f.gain_at(center)) <= -30.0, "{}", db(f.gain_at(center)));
            assert!((f.gain_at(center - 5.0) - 1.0).abs() < 0.05);
            assert!((f.gain_at(10.0) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn invalid_bands() {
        assert!(design_fir(Band::Lowpass { cutoff_hz: 70.0 }, 16.0, 128.0).is_err());
        assert!(design_fir(Band::Highpass { cutoff_hz: 0.0 }, 0.5, 128.0).is_err());
        assert!(design_fir(Band::Highpass { cutoff_hz: 1.0 }, 0.0, 128.0).is_err());
        assert!(design_fir(
            Band::Notch {
                center_hz: 63.8,
                stop_width_hz: 1.0
            },
            0.5,
            128.0
        )
        .is_err());
    }

    fn direct(x: &[f64], taps: &[f64]) -> Vec<f64> {
        let half = taps.len() as i64 / 2;
        (0..x.len() as i64)
            .map(|i| {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * x[reflect_index(i - half + k as i64, x.len())];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_path_matches_direct_convolution() {
        let x: Vec<f64> = (0..1000)
            .map(|i| (i as f64 * 0.173).sin() * 40.0 + ((i * 37) % 11) as f64)
            .collect();
        let f = design_fir(Band::Lowpass { cutoff_hz: 20.0 }, 2.0, 128.0).unwrap();
        assert!(f.len() > DIRECT_MAX_TAPS);
        let fast = Convolver::new(&f.taps).apply_reflect(&x);
        for (a, b) in fast.iter().zip(direct(&x, &f.taps)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let rec =
            Recording::new("r", "p", vec!["Cz".into()], 128.0, vec![vec![0.0; 2000]]).unwrap();
        let f = design_fir(Band::Highpass { cutoff_hz: 0.5 }, 0.5, 128.0).unwrap();
        let out = filter_reflect(&rec, &f).unwrap();
        assert!(out.samples[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short() {
        let rec = Recording::new("r", "p", vec!["Cz".into()], 128.0, vec![vec![0.0; 100]]).unwrap();
        let f = design_fir(Band::Highpass { cutoff_hz: 0.5 }, 0.5, 128.0).unwrap();
        assert!(matches!(
            filter_reflect(&rec, &f),
            Err(PreprocessError::TooShort { .. })
        ));
    }
}
