use pcg_core::distortion::{
    apply_channel, make_channel, mix_at_snr, noise_for, synth_pcg, ChannelKind, ChannelModel, ConvolutionMode,
    NoiseSpec, SyntheticPcgSpec,
};
use pcg_core::preprocess::shannon_envelope;
use pcg_core::Label;
use pcg_oracles::{assert_all, distortion_checks};
use proptest::prelude::*;

#[test]
fn distortion_model_suite() {
    assert_all(&distortion_checks::suite());
}

#[test]
fn shaped_channels_deviate_only_modestly_after_band_averaging() {
    let dev = distortion_checks::shaped_channel_log_deviation();
    assert!(
        dev > 1e-6,
        "shaped channel should not be exactly additive per band, got {dev}"
    );
    assert!(dev < 1.0, "log deviation {dev}");
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn snr_ten_db_on_unit_power() {
    let s: Vec<f64> = (0..2500).map(|t| (t as f64 * 0.37).sin() * 2f64.sqrt()).collect();
    let p = power(&s);
    let n = noise_for(&s, &NoiseSpec::white(10.0, 3)).unwrap();
    assert!((power(&n) - 0.1 * p).abs() <= 1e-6 * 0.1 * p);
    let x = mix_at_snr(&s, &NoiseSpec::white(0.0, 4)).unwrap();
    let n0: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a - b).collect();
    assert!((power(&n0) - p).abs() <= 1e-6 * p);
}

/// Onsets of S1 by peak picking on the Shannon envelope, one per second.
fn envelope_peaks(x: &[f64], period: usize) -> Vec<usize> {
    let env = shannon_envelope(x);
    env.chunks(period)
        .enumerate()
        .map(|(i, c)| {
            let (j, _) = c
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |a, (j, &v)| if v > a.1 { (j, v) } else { a });
            i * period + j
        })
        .collect()
}

#[test]
fn sixty_bpm_has_one_s1_per_second() {
    let x = synth_pcg(&SyntheticPcgSpec {
        heart_rate_bpm: 60.0,
        class: Label::Normal,
        murmur_band: (150.0, 350.0),
        murmur_level: 0.0,
        duration_s: 2.5,
        seed: 1,
    })
    .unwrap();
    assert_eq!(x.len(), 2500);
    let peaks = envelope_peaks(&x[..2000], 1000);
    assert_eq!(peaks.len(), 2);
    // S1 is the loudest event of each cycle and starts at the cycle origin.
    assert!(peaks[0] < 100, "{peaks:?}");
    assert!((peaks[1] as i64 - peaks[0] as i64 - 1000).abs() <= 5, "{peaks:?}");
}

#[test]
fn presets_have_unit_peak_response() {
    for kind in [
        ChannelKind::Identity,
        ChannelKind::LowpassTilt,
        ChannelKind::Resonant,
        ChannelKind::RandomFir { seed: 7, len: 8 },
    ] {
        let h = make_channel(kind).unwrap();
        // Dense direct evaluation of |H(f)|.
        let peak = (0..=8192)
            .map(|i| {
                let w = std::f64::consts::PI * i as f64 / 8192.0;
                let (re, im) = h
                    .impulse_response
                    .iter()
                    .enumerate()
                    .fold((0.0, 0.0), |(r, m), (t, &v)| {
                        (r + v * (w * t as f64).cos(), m - v * (w * t as f64).sin())
                    });
                (re * re + im * im).sqrt()
            })
            .fold(0.0, f64::max);
        // The dense grid may straddle the true peak but must never exceed it.
        assert!(peak <= 1.0 + 1e-9 && peak > 1.0 - 1e-5, "{kind}: {peak}");
    }
    assert_eq!(make_channel(ChannelKind::Identity).unwrap().impulse_response, vec![1.0]);
}

proptest! {
    #[test]
    fn circular_delay_rotates(x in prop::collection::vec(-1.0f64..1.0, 8..80), d in 0usize..8) {
        let mut taps = vec![0.0; d + 1];
        taps[d] = 1.0;
        let h = ChannelModel::from_taps(taps, "delay").unwrap();
        let y = apply_channel(&x, &h, ConvolutionMode::Circular).unwrap();
        let n = x.len();
        for t in 0..n {
            prop_assert!((y[t] - x[(t + n - d) % n]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_convolution_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        g in -3.0f64..3.0,
    ) {
        let h = make_channel(ChannelKind::Resonant).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + g * y).collect();
        let lhs = apply_channel(&mix, &h, ConvolutionMode::Linear).unwrap();
        let ya = apply_channel(&a, &h, ConvolutionMode::Linear).unwrap();
        let yb = apply_channel(&b, &h, ConvolutionMode::Linear).unwrap();
        for i in 0..64 {
            prop_assert!((lhs[i] - (ya[i] + g * yb[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_hits_the_requested_snr(seed in 0u64..1000, snr in -10.0f64..30.0) {
        let s: Vec<f64> = (0..1000).map(|t| ((t as f64) * 0.05).sin() + 0.2).collect();
        let n = noise_for(&s, &NoiseSpec::white(snr, seed)).unwrap();
        let measured = 10.0 * (power(&s) / power(&n)).log10();
        prop_assert!((measured - snr).abs() < 1e-6);
    }
}
