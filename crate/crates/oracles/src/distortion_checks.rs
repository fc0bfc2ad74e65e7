//! Additive/convolutional distortion identities. Signals are single
//! 64-sample frames under circular convolution, so the DFT of the channel
//! output is exactly the product of the input and channel DFTs.
//!
//! Per DFT bin the noise-free identities are exact for any channel. After
//! mel-filterbank averaging they stay exact only when the channel response
//! is flat inside every filter, so the filterbank-level checks use
//! band-flat channels (a gain and a delay), and the deviation for a shaped
//! channel is measured separately.

use pcg_core::distortion::{apply_channel, make_channel, ChannelKind, ChannelModel, ConvolutionMode};
use pcg_core::dsp::{power_spectrum, Dct2, MelFilterbank, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::{max_abs_diff, Check};

const N: usize = 64;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn direct_dft(x: &[f64], n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

fn circ(x: &[f64], h: &ChannelModel) -> Vec<f64> {
    apply_channel(x, h, ConvolutionMode::Circular).unwrap()
}

fn power(x: &[f64]) -> Vec<f64> {
    power_spectrum(x, N).unwrap().power
}

fn bank() -> MelFilterbank {
    MelFilterbank::new(26, 1000.0, N, 0.0, 500.0).unwrap()
}

fn fb(bank: &MelFilterbank, p: &[f64]) -> Vec<f64> {
    bank.apply(&Spectrum { power: p.to_vec() }).unwrap()
}

/// Channel level per filter: `|H[k]|²` averaged with the filter weights.
fn channel_energy(bank: &MelFilterbank, h2: &[f64]) -> Vec<f64> {
    bank.weights()
        .iter()
        .map(|row| row.iter().zip(h2).map(|(w, p)| w * p).sum::<f64>() / row.iter().sum::<f64>())
        .collect()
}

/// Well-conditioned random channel: unit leading tap plus small echoes,
/// so `|H[k]| >= 0.3` everywhere.
fn random_channel(rng: &mut ChaCha8Rng) -> ChannelModel {
    let mut taps = vec![1.0];
    taps.extend((0..7).map(|_| rng.random_range(-0.1..0.1)));
    ChannelModel::from_taps(taps, "random").unwrap()
}

/// Gain `g` with a `d`-sample delay: flat magnitude response.
fn flat_channel(g: f64, d: usize) -> (ChannelModel, f64) {
    let mut taps = vec![0.0; d + 1];
    taps[d] = g;
    // from_taps rescales to unit peak; re-apply the gain afterwards.
    let mut ch = ChannelModel::from_taps(taps, "flat").unwrap();
    ch.impulse_response[d] = g;
    (ch, g * g)
}

pub fn dft_product() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = randn(&mut rng, N);
        let taps = randn(&mut rng, 8);
        let h = ChannelModel::from_taps(taps, "r").unwrap();
        let y = direct_dft(&circ(&x, &h), N);
        let xs = direct_dft(&x, N);
        let hs = direct_dft(&h.impulse_response, N);
        for k in 0..N {
            let (a, b) = (xs[k], hs[k]);
            let prod = (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
            worst = worst.max((y[k].0 - prod.0).abs()).max((y[k].1 - prod.1).abs());
        }
    }
    Check::below("circular convolution: DFT(out) = DFT(x) DFT(h)", worst, 1e-9)
}

pub fn multiplicative_noise_free() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut bin_err: f64 = 0.0;
    let mut channels: Vec<ChannelModel> = (0..10).map(|_| random_channel(&mut rng)).collect();
    for kind in [
        ChannelKind::LowpassTilt,
        ChannelKind::Resonant,
        ChannelKind::RandomFir { seed: 7, len: 8 },
    ] {
        channels.push(make_channel(kind).unwrap());
    }
    for h in &channels {
        let h2 = power(&h.impulse_response);
        for _ in 0..10 {
            let s = randn(&mut rng, N);
            let (px, ps) = (power(&circ(&s, h)), power(&s));
            let scale = px.iter().copied().fold(0.0, f64::max);
            for k in 0..px.len() {
                bin_err = bin_err.max((px[k] - ps[k] * h2[k]).abs() / scale);
            }
        }
    }
    let bank = bank();
    let mut band_err: f64 = 0.0;
    for (g, d) in [(0.5, 3), (1.0, 0), (0.8, 17)] {
        let (h, g2) = flat_channel(g, d);
        let eh = channel_energy(&bank, &vec![g2; N / 2 + 1]);
        for _ in 0..10 {
            let s = randn(&mut rng, N);
            let ex = fb(&bank, &power(&circ(&s, &h)));
            let es = fb(&bank, &power(&s));
            for i in 0..ex.len() {
                band_err = band_err.max((ex[i] - es[i] * eh[i]).abs() / ex[i]);
            }
        }
    }
    vec![
        Check::below("noise-free |X|^2 = |S|^2 |H|^2 per bin, relative", bin_err, 1e-6),
        Check::below(
            "noise-free filterbank X[i] = S[i] H[i], band-flat channels, relative",
            band_err,
            1e-6,
        ),
    ]
}

/// Mean over filters of `|mean cross term| / mean expected energy` across
/// `draws` independent signal/noise pairs through a shaped channel.
pub fn cross_term(draws: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let bank = bank();
    let h = make_channel(ChannelKind::Resonant).unwrap();
    let h2 = power(&h.impulse_response);
    let m = bank.num_filters();
    let (mut cross, mut expected) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..draws {
        let s = randn(&mut rng, N);
        let n = randn(&mut rng, N);
        let sn: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        let ex = fb(&bank, &power(&circ(&sn, &h)));
        let (ps, pn) = (power(&s), power(&n));
        let model: Vec<f64> = (0..ps.len()).map(|k| (ps[k] + pn[k]) * h2[k]).collect();
        let em = fb(&bank, &model);
        for i in 0..m {
            cross[i] += ex[i] - em[i];
            expected[i] += em[i];
        }
    }
    let rel: Vec<f64> = cross.iter().zip(&expected).map(|(c, e)| c.abs() / e).collect();
    let mean = rel.iter().sum::<f64>() / m as f64;
    (mean, rel.into_iter().fold(0.0, f64::max))
}

pub fn cross_term_check() -> Check {
    let (mean, _) = cross_term(1000);
    Check::below("cross term mean relative to expected energy, 1000 draws", mean, 0.05)
}

pub fn log_additive() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut bin_err: f64 = 0.0;
    let mut cep_err: f64 = 0.0;
    let dct_bins = Dct2::new(N / 2 + 1).unwrap();
    for _ in 0..10 {
        let h = random_channel(&mut rng);
        let lh: Vec<f64> = power(&h.impulse_response).iter().map(|v| v.ln()).collect();
        let ch = dct_bins.forward(&lh, lh.len()).unwrap();
        for _ in 0..10 {
            let s = randn(&mut rng, N);
            let lx: Vec<f64> = power(&circ(&s, &h)).iter().map(|v| v.ln()).collect();
            let ls: Vec<f64> = power(&s).iter().map(|v| v.ln()).collect();
            let diff: Vec<f64> = lx.iter().zip(&ls).map(|(a, b)| a - b).collect();
            bin_err = bin_err.max(max_abs_diff(&diff, &lh));
            let cx = dct_bins.forward(&lx, lx.len()).unwrap();
            let cs = dct_bins.forward(&ls, ls.len()).unwrap();
            let cdiff: Vec<f64> = cx.iter().zip(&cs).map(|(a, b)| a - b).collect();
            cep_err = cep_err.max(max_abs_diff(&cdiff, &ch));
        }
    }
    let bank = bank();
    let dct = Dct2::new(26).unwrap();
    let (mut band_err, mut band_cep_err): (f64, f64) = (0.0, 0.0);
    for (g, d) in [(0.5, 3), (0.8, 17)] {
        let (h, g2) = flat_channel(g, d);
        let eh: Vec<f64> = channel_energy(&bank, &vec![g2; N / 2 + 1])
            .iter()
            .map(|v| v.ln())
            .collect();
        let ceh = dct.forward(&eh, 13).unwrap();
        for _ in 0..10 {
            let s = randn(&mut rng, N);
            let ex: Vec<f64> = fb(&bank, &power(&circ(&s, &h))).iter().map(|v| v.ln()).collect();
            let es: Vec<f64> = fb(&bank, &power(&s)).iter().map(|v| v.ln()).collect();
            let diff: Vec<f64> = ex.iter().zip(&es).map(|(a, b)| a - b).collect();
            band_err = band_err.max(max_abs_diff(&diff, &eh));
            let cdiff: Vec<f64> = dct
                .forward(&ex, 13)
                .unwrap()
                .iter()
                .zip(dct.forward(&es, 13).unwrap())
                .map(|(a, b)| a - b)
                .collect();
            band_cep_err = band_cep_err.max(max_abs_diff(&cdiff, &ceh));
        }
    }
    vec![
        Check::below("log domain: log|X|^2 - log|S|^2 = log|H|^2 per bin", bin_err, 1e-6),
        Check::below("log filterbank: channel offset, band-flat channels", band_err, 1e-6),
        Check::below("cepstral: DCT(E_X) - DCT(E_S) = DCT(E_H) per bin", cep_err, 1e-6),
        Check::below("cepstral, 13 kept coefficients, band-flat channels", band_cep_err, 1e-6),
    ]
}

/// Largest log-filterbank deviation from a pure channel offset for the
/// shaped presets. Measured only; in-band variation of `|H|` makes it
/// nonzero.
pub fn shaped_channel_log_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let bank = bank();
    let mut worst: f64 = 0.0;
    for kind in [ChannelKind::LowpassTilt, ChannelKind::Resonant] {
        let h = make_channel(kind).unwrap();
        let eh: Vec<f64> = channel_energy(&bank, &power(&h.impulse_response))
            .iter()
            .map(|v| v.ln())
            .collect();
        for _ in 0..20 {
            let s = randn(&mut rng, N);
            let ex: Vec<f64> = fb(&bank, &power(&circ(&s, &h))).iter().map(|v| v.ln()).collect();
            let es: Vec<f64> = fb(&bank, &power(&s)).iter().map(|v| v.ln()).collect();
            let diff: Vec<f64> = ex.iter().zip(&es).map(|(a, b)| a - b).collect();
            worst = worst.max(max_abs_diff(&diff, &eh));
        }
    }
    worst
}

pub fn suite() -> Vec<Check> {
    let mut out = vec![dft_product()];
    out.extend(multiplicative_noise_free());
    out.push(cross_term_check());
    out.extend(log_additive());
    out
}
