use std::f64::consts::PI;

use pcg_core::distortion::{synth_pcg, SyntheticPcgSpec};
use pcg_core::preprocess::{bandpass_25_400, detect_onsets, preprocess, resample_1k, slice_cycles, PcgRecording};
use pcg_core::{Label, CYCLE_LEN};
use proptest::prelude::*;

fn sine(freq: f64, fs: f64, len: usize) -> Vec<f64> {
    (0..len).map(|t| (2.0 * PI * freq * t as f64 / fs).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Argmax of the directly evaluated DFT magnitude over `0..=n/2`.
fn peak_bin(x: &[f64]) -> usize {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(r, i), (t, &v)| {
                let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                (r + v * a.cos(), i + v * a.sin())
            });
            (k, re.hypot(im))
        })
        .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a })
        .0
}

/// Output-to-input RMS ratio in dB, measured away from the edges.
fn gain_db(freq: f64, len: usize) -> f64 {
    let x = sine(freq, 1000.0, len);
    let y = bandpass_25_400(&x);
    let mid = len / 4..3 * len / 4;
    20.0 * (rms(&y[mid.clone()]) / rms(&x[mid])).log10()
}

fn recording(samples: Vec<f64>) -> PcgRecording {
    PcgRecording {
        id: "r".into(),
        samples,
        sample_rate: 1000.0,
        label: Label::Normal,
        domain: "a".into(),
        patient_id: "p".into(),
        quality: None,
    }
}

#[test]
fn resampled_sine_keeps_its_frequency() {
    let x = sine(100.0, 4000.0, 8000);
    let y = resample_1k(&x, 4000.0).unwrap();
    assert_eq!(y.len(), 2000);
    // 2000 samples at 1 kHz: bin k is k/2 Hz.
    let k = peak_bin(&y);
    assert!(k.abs_diff(200) <= 1, "peak bin {k}");
}

#[test]
fn resample_halves_length_and_rejects_upsampling() {
    assert_eq!(resample_1k(&vec![0.5; 5000], 2000.0).unwrap().len(), 2500);
    assert!(resample_1k(&[1.0; 10], 500.0).is_err());
}

#[test]
fn bandpass_keeps_200_hz_within_1_db() {
    let g = gain_db(200.0, 4000);
    assert!(g.abs() < 1.0, "{g} dB");
}

#[test]
fn bandpass_passband_ripple() {
    for f in [50.0, 100.0, 150.0, 250.0, 300.0, 350.0] {
        let g = gain_db(f, 4000);
        assert!(g.abs() < 1.0, "{f} Hz: {g} dB");
    }
}

#[test]
fn bandpass_stopbands_attenuate_20_db() {
    let low = gain_db(5.0, 20_000);
    let high = gain_db(480.0, 4000);
    assert!(low <= -20.0, "5 Hz: {low} dB");
    assert!(high <= -20.0, "480 Hz: {high} dB");
}

#[test]
fn bandpass_is_zero_phase() {
    let mut x = vec![0.0; 4001];
    x[2000] = 1.0;
    let y = bandpass_25_400(&x);
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let centroid = y.iter().enumerate().map(|(t, v)| t as f64 * v * v).sum::<f64>() / energy;
    assert!((centroid - 2000.0).abs() < 1.0, "centroid {centroid}");
}

#[test]
fn detector_finds_beats_of_a_60_bpm_recording() {
    let x = synth_pcg(&SyntheticPcgSpec {
        heart_rate_bpm: 60.0,
        class: Label::Normal,
        murmur_band: (150.0, 350.0),
        murmur_level: 0.0,
        duration_s: 10.0,
        seed: 3,
    })
    .unwrap();
    let y = preprocess(&x, 1000.0).unwrap();
    let onsets = detect_onsets(&y);
    assert!((9..=10).contains(&onsets.len()), "{onsets:?}");
    for w in onsets.windows(2) {
        assert!((w[1] as i64 - w[0] as i64 - 1000).abs() <= 50, "{onsets:?}");
    }
}

#[test]
fn slicing_is_deterministic() {
    let x = synth_pcg(&SyntheticPcgSpec {
        heart_rate_bpm: 72.0,
        class: Label::Abnormal,
        murmur_band: (150.0, 350.0),
        murmur_level: 0.5,
        duration_s: 6.0,
        seed: 9,
    })
    .unwrap();
    let rec = recording(preprocess(&x, 1000.0).unwrap());
    assert_eq!(slice_cycles(&rec, None).unwrap(), slice_cycles(&rec, None).unwrap());
}

proptest! {
    #[test]
    fn every_segment_has_cycle_length(
        len in 1usize..6000,
        onsets in prop::collection::vec(0usize..6000, 1..6),
    ) {
        let rec = recording((0..len).map(|t| (t as f64 * 0.1).sin()).collect());
        match slice_cycles(&rec, Some(&onsets)) {
            Ok(segs) => {
                prop_assert!(!segs.is_empty());
                for s in segs {
                    prop_assert_eq!(s.samples.len(), CYCLE_LEN);
                }
            }
            // Only when every onset lies past the end.
            Err(_) => prop_assert!(onsets.iter().all(|&o| o >= len)),
        }
    }

    #[test]
    fn bandpass_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 300),
        b in prop::collection::vec(-1.0f64..1.0, 300),
        g in -2.0f64..2.0,
    ) {
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + g * y).collect();
        let lhs = bandpass_25_400(&mix);
        let (ya, yb) = (bandpass_25_400(&a), bandpass_25_400(&b));
        for i in 0..300 {
            prop_assert!((lhs[i] - ya[i] - g * yb[i]).abs() < 1e-9);
        }
    }
}
