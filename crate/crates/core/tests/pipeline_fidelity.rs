use std::f64::consts::PI;

use lookaround_core::preprocess::{
    design_fir, pipeline_filters, preprocess_pipeline, to_bipolar, Band, MontageSpec,
    PreprocessConfig, DERIVATIONS,
};
use lookaround_core::recording::labels::ELECTRODES;
use lookaround_core::recording::Recording;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 256.0;

/// Single-bin DFT amplitude of `x` at `freq` Hz.
fn amplitude_at(x: &[f64], fs: f64, freq: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let ph = 2.0 * PI * freq * i as f64 / fs;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

fn referential(seconds: usize, mut f: impl FnMut(usize, f64) -> f64) -> Recording {
    let n = seconds * FS as usize;
    let labels: Vec<String> = ELECTRODES.iter().map(|s| s.to_string()).collect();
    let rows = (0..labels.len())
        .map(|c| (0..n).map(|i| f(c, i as f64 / FS)).collect())
        .collect();
    Recording::new("fixture", "p", labels, FS, rows).unwrap()
}

/// Interior of a 128 Hz output, skipping edge effects.
fn interior(x: &[f64]) -> &[f64] {
    &x[1280..x.len() - 1280]
}

#[test]
fn line_noise_suppressed_by_30_db() {
    // Only the anode of Fp2-F4 carries the 20 µV, 50 Hz tone.
    let fp2 = ELECTRODES.iter().position(|e| *e == "Fp2").unwrap();
    let rec = referential(60, |c, t| {
        if c == fp2 {
            20.0 * (2.0 * PI * 50.0 * t).sin()
        } else {
            0.0
        }
    });
    let out = preprocess_pipeline(&rec, &PreprocessConfig::default()).unwrap();
    let before = 20.0;
    let after = amplitude_at(interior(&out.samples[0]), 128.0, 50.0);
    let db = 20.0 * (before / after).log10();
    assert!(after <= 0.7, "50 Hz residue {after} µV");
    assert!(db >= 30.0, "suppression {db} dB");
}

#[test]
fn highpass_blocks_dc_exactly() {
    let hp = design_fir(Band::Highpass { cutoff_hz: 0.5 }, 0.5, FS).unwrap();
    // Centre tap plus twice the one-sided sum, the symmetric DC response.
    assert_eq!(hp.dc_gain(), 0.0);
    assert!(hp.taps.iter().sum::<f64>().abs() < 1e-12);
    // Through the whole pipeline a constant leaves only rounding residue.
    let rec = referential(30, |c, _| 10.0 * c as f64 - 40.0);
    let out = preprocess_pipeline(&rec, &PreprocessConfig::default()).unwrap();
    let worst = out
        .samples
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-9, "DC residue {worst}");
}

#[test]
fn passband_gain_within_five_percent() {
    let filters = pipeline_filters(&PreprocessConfig::default(), FS).unwrap();
    for tenth in 10..=400 {
        let f = tenth as f64 / 10.0;
        let g: f64 = filters.iter().map(|h| h.gain_at(f)).product();
        assert!((g - 1.0).abs() <= 0.05, "cascade gain {g} at {f} Hz");
    }
    // Measured end to end on sinusoids, resampling included.
    let fp2 = ELECTRODES.iter().position(|e| *e == "Fp2").unwrap();
    for f in [1.0, 3.0, 10.0, 25.0, 40.0] {
        let rec = referential(60, |c, t| {
            if c == fp2 {
                (2.0 * PI * f * t).sin()
            } else {
                0.0
            }
        });
        let out = preprocess_pipeline(&rec, &PreprocessConfig::default()).unwrap();
        let g = amplitude_at(interior(&out.samples[0]), 128.0, f);
        assert!((g - 1.0).abs() <= 0.05, "measured gain {g} at {f} Hz");
    }
}

#[test]
fn montage_equals_subtraction_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rec = referential(2, |_, _| rng.random_range(-300.0..300.0));
    let out = to_bipolar(&rec, &MontageSpec::default()).unwrap();
    for (ch, (anode, cathode)) in DERIVATIONS.iter().enumerate() {
        assert_eq!(out.channel_labels[ch], format!("{anode}-{cathode}"));
        let a = rec.channel(anode).unwrap();
        let c = rec.channel(cathode).unwrap();
        for i in 0..rec.n_samples() {
            assert_eq!(out.samples[ch][i], a[i] - c[i]);
        }
    }
}

#[test]
fn notch_frequency_configurable() {
    let fp2 = ELECTRODES.iter().position(|e| *e == "Fp2").unwrap();
    let rec = referential(60, |c, t| {
        if c == fp2 {
            20.0 * (2.0 * PI * 60.0 * t).sin()
        } else {
            0.0
        }
    });
    let cfg = PreprocessConfig {
        notch_hz: 60.0,
        ..PreprocessConfig::default()
    };
    let out = preprocess_pipeline(&rec, &cfg).unwrap();
    assert!(amplitude_at(interior(&out.samples[0]), 128.0, 60.0) <= 0.7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pipeline_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = referential(12, |_, _| rng.random_range(-50.0..50.0));
        let y = referential(12, |_, _| rng.random_range(-50.0..50.0));
        let mix = Recording {
            samples: x.samples.iter().zip(&y.samples)
                .map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect())
                .collect(),
            ..x.clone()
        };
        let cfg = PreprocessConfig::default();
        let (px, py, pm) = (
            preprocess_pipeline(&x, &cfg).unwrap(),
            preprocess_pipeline(&y, &cfg).unwrap(),
            preprocess_pipeline(&mix, &cfg).unwrap(),
        );
        let scale = pm.samples.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for ((r, u), v) in pm.samples.iter().zip(&px.samples).zip(&py.samples) {
            for ((m, p), q) in r.iter().zip(u).zip(v) {
                prop_assert!((m - (a * p + b * q)).abs() <= 1e-6 * scale);
            }
        }
    }
}
