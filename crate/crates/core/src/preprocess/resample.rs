//! Polyphase rational resampling down to the model rate.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::recording::Recording;
use crate::MODEL_FS;

use super::{reflect_index, PreprocessError, Result};

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `(up, down)` with `target / source = up / down` in lowest terms. Rates are
/// resolved to 1 mHz.
pub fn rational_ratio(source_fs: f64, target_fs: f64) -> Result<(usize, usize)> {
    let to_milli = |f: f64| {
        let m = (f * 1000.0).round();
        ((f * 1000.0 - m).abs() < 1e-6 && m > 0.0).then_some(m as u64)
    };
    let (Some(src), Some(dst)) = (to_milli(source_fs), to_milli(target_fs)) else {
        return Err(PreprocessError::UnsupportedRatio { fs: source_fs });
    };
    let g = gcd(src, dst);
    let (up, down) = ((dst / g) as usize, (src / g) as usize);
    if up > 4096 || down > 1 << 20 {
        return Err(PreprocessError::UnsupportedRatio { fs: source_fs });
    }
    Ok((up, down))
}

/// Polyphase decomposition of a Hamming-windowed sinc anti-alias filter.
/// Each phase is normalised to unit DC gain so constants pass unchanged.
pub struct Resampler {
    up: usize,
    down: usize,
    center: usize,
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(up: usize, down: usize) -> Self {
        let half = 10 * up.max(down);
        let n = 2 * half + 1;
        // cutoff at the lower of the two Nyquist rates, in cycles per upsampled sample
        let fc = 0.5 / up.max(down) as f64;
        let taps: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 - half as f64;
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                let sinc = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * x).sin() / (PI * x)
                };
                w * sinc
            })
            .collect();
        let phases = (0..up)
            .map(|p| {
                let mut phase: Vec<f64> = taps.iter().skip(p).step_by(up).copied().collect();
                let sum: f64 = phase.iter().sum();
                phase.iter_mut().for_each(|t| *t /= sum);
                phase
            })
            .collect();
        Resampler {
            up,
            down,
            center: half,
            phases,
        }
    }

    pub fn output_len(&self, n_in: usize) -> usize {
        (n_in * self.up).div_ceil(self.down)
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(x.len());
        (0..n_out)
            .map(|m| {
                let t = m * self.down + self.center;
                let phase = t % self.up;
                let base = ((t - phase) / self.up) as i64;
                self.phases[phase]
                    .iter()
                    .enumerate()
                    .map(|(i, h)| h * x[reflect_index(base - i as i64, x.len())])
                    .sum()
            })
            .collect()
    }
}

/// Resamples every channel to 128 Hz. Input must already be band-limited.
pub fn resample_to_128(rec: &Recording) -> Result<Recording> {
    resample_to(rec, MODEL_FS)
}

pub fn resample_to(rec: &Recording, target_fs: f64) -> Result<Recording> {
    if rec.fs < target_fs {
        return Err(PreprocessError::UpsampleUnsupported { fs: rec.fs });
    }
    if rec.fs == target_fs {
        return Ok(rec.clone());
    }
    let (up, down) = rational_ratio(rec.fs, target_fs)?;
    let resampler = Resampler::new(up, down);
    let samples = rec
        .samples
        .par_iter()
        .map(|row| resampler.process(row))
        .collect();
    Ok(rec.with_samples(rec.channel_labels.clone(), target_fs, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(fs: f64, samples: Vec<f64>) -> Recording {
        Recording::new("r", "p", vec!["Cz".into()], fs, vec![samples]).unwrap()
    }

    #[test]
    fn ratios() {
        assert_eq!(rational_ratio(256.0, 128.0).unwrap(), (1, 2));
        assert_eq!(rational_ratio(250.0, 128.0).unwrap(), (64, 125));
        assert_eq!(rational_ratio(512.0, 128.0).unwrap(), (1, 4));
    }

    #[test]
    fn factor_two_count() {
        let out = resample_to_128(&single(256.0, vec![0.0; 512])).unwrap();
        assert_eq!(out.n_samples(), 256);
        assert_eq!(out.fs, 128.0);
    }

    #[test]
    fn upsampling_rejected() {
        assert!(matches!(
            resample_to_128(&single(100.0, vec![0.0; 100])),
            Err(PreprocessError::UpsampleUnsupported { .. })
        ));
    }

    #[test]
    fn constant_preserved() {
        for fs in [256.0, 250.0, 500.0, 200.0] {
            let n = (fs * 10.0) as usize;
            let out = resample_to_128(&single(fs, vec![7.25; n])).unwrap();
            for v in &out.samples[0] {
                assert!((v - 7.25).abs() < 1e-6, "fs {fs}: {v}");
            }
        }
    }

    #[test]
    fn sinusoid_at_250() {
        let fs = 250.0;
        let n = 2500;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin())
            .collect();
        let out = resample_to_128(&single(fs, x)).unwrap();
        let y = &out.samples[0];
        // interior, away from the reflected edges
        let interior = 128..y.len() - 128;
        let mse: f64 = interior
            .clone()
            .map(|m| {
                let reference = (2.0 * PI * 5.0 * m as f64 / 128.0).sin();
                (y[m] - reference).powi(2)
            })
            .sum::<f64>()
            / interior.len() as f64;
        assert!(mse.sqrt() < 0.02, "rms {}", mse.sqrt());
    }

    #[test]
    fn duration_preserved_within_one_sample() {
        for (fs, n) in [(256.0, 1001), (250.0, 12345), (500.0, 777)] {
            let rec = single(fs, vec![0.0; n]);
            let out = resample_to_128(&rec).unwrap();
            assert!((out.duration_s() - rec.duration_s()).abs() <= 1.0 / 128.0);
        }
    }
}
