//! Spectral-analysis identities against direct evaluation.

use ndarray::Array2;
use pcg_core::dsp::{
    dct2_orthonormal, delta_features, frame_signal, hz_to_mel, log_energies, power_spectrum, Dct2, FrameSpec,
    MelFilterbank, Spectrum, WindowFn,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::{max_abs_diff, Check};

fn randu(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `|X[k]|²` by the defining sum, zero-padded to `n`.
pub fn direct_power(x: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Sum of the two-sided spectrum rebuilt from one-sided bins.
fn two_sided_sum(p: &[f64], n: usize) -> f64 {
    let inner: f64 = p[1..n / 2].iter().sum();
    p[0] + p[n / 2] + 2.0 * inner
}

pub fn parseval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = FrameSpec::new(50, 10, WindowFn::Rectangular, 64).unwrap();
    let x = randu(&mut rng, 2500);
    let mut worst: f64 = 0.0;
    for frame in frame_signal(&x, &spec).unwrap() {
        let p = power_spectrum(&frame, 64).unwrap().power;
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        worst = worst.max((energy - two_sided_sum(&p, 64) / 64.0).abs() / energy);
    }
    Check::below("Parseval per frame, relative", worst, 1e-9)
}

pub fn power_matches_direct_dft() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for len in [1, 17, 50, 64] {
        let x = randu(&mut rng, len);
        let fast = power_spectrum(&x, 64).unwrap().power;
        worst = worst.max(max_abs_diff(&fast, &direct_power(&x, 64)));
    }
    Check::below("power spectrum vs direct DFT", worst, 1e-9)
}

pub fn cosine_at_bin_four() -> Vec<Check> {
    let x: Vec<f64> = (0..64).map(|t| (2.0 * PI * 4.0 * t as f64 / 64.0).cos()).collect();
    let p = power_spectrum(&x, 64).unwrap().power;
    let leak = p
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != 4)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max);
    vec![
        Check::below("cosine bin 4 power vs (64/2)^2", (p[4] - 1024.0).abs(), 1e-9),
        Check::below("cosine leakage into other bins", leak, 1e-9),
    ]
}

pub fn mel_scale() -> Vec<Check> {
    let oracle = 2595.0 * 2f64.log10();
    vec![
        Check::below("mel(0)", hz_to_mel(0.0).abs(), 1e-12),
        Check::below("mel(700) vs 2595 log10 2", (hz_to_mel(700.0) - oracle).abs(), 1e-9),
        Check::below("mel(700) vs 781.17", (hz_to_mel(700.0) - 781.17).abs(), 5e-3),
    ]
}

fn bank() -> MelFilterbank {
    MelFilterbank::new(26, 1000.0, 64, 0.0, 500.0).unwrap()
}

pub fn filterbank_shape() -> Check {
    let fb = bank();
    let ok = fb.num_filters() == 26
        && fb
            .weights()
            .iter()
            .all(|row| row.len() == 33 && row.iter().sum::<f64>() > 0.0);
    Check::holds("26 filters, each with positive weight", ok)
}

pub fn filterbank_direct() -> Check {
    let fb = bank();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p: Vec<f64> = (0..33).map(|_| rng.random_range(0.0..10.0)).collect();
        let e = fb.apply(&Spectrum { power: p.clone() }).unwrap();
        let direct: Vec<f64> = fb
            .weights()
            .iter()
            .map(|row| {
                let n = row.iter().filter(|&&w| w > 0.0).count() as f64;
                row.iter().zip(&p).map(|(w, v)| w * v).sum::<f64>() / n
            })
            .collect();
        worst = worst.max(max_abs_diff(&e, &direct));
    }
    Check::below("filterbank vs in-band weighted means", worst, 1e-12)
}

pub fn filterbank_linearity() -> Check {
    let fb = bank();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p1: Vec<f64> = (0..33).map(|_| rng.random_range(0.0..1.0)).collect();
        let p2: Vec<f64> = (0..33).map(|_| rng.random_range(0.0..1.0)).collect();
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
        let lhs = fb.apply(&Spectrum { power: mix }).unwrap();
        let e1 = fb.apply(&Spectrum { power: p1 }).unwrap();
        let e2 = fb.apply(&Spectrum { power: p2 }).unwrap();
        let rhs: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    Check::below("filterbank linearity", worst, 1e-12)
}

/// Orthonormal DCT-II by its defining sum.
pub fn direct_dct(v: &[f64]) -> Vec<f64> {
    let m = v.len() as f64;
    (0..v.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * v.iter()
                    .enumerate()
                    .map(|(n, x)| x * (PI * k as f64 * (2.0 * n as f64 + 1.0) / (2.0 * m)).cos())
                    .sum::<f64>()
        })
        .collect()
}

pub fn dct() -> Vec<Check> {
    let d = Dct2::new(26).unwrap();
    let mut gram_err: f64 = 0.0;
    let basis: Vec<Vec<f64>> = (0..26)
        .map(|i| {
            let mut e = vec![0.0; 26];
            e[i] = 1.0;
            d.forward(&e, 26).unwrap()
        })
        .collect();
    for i in 0..26 {
        for j in 0..26 {
            let g: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            gram_err = gram_err.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (mut norm_err, mut inv_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let v: Vec<f64> = randu(&mut rng, 26).iter().map(|x| 10.0 * x).collect();
        let c = d.forward(&v, 26).unwrap();
        let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        norm_err = norm_err.max((n0 - n1).abs());
        inv_err = inv_err.max(max_abs_diff(&d.inverse(&c).unwrap(), &v));
    }
    let v = [1.0, 2.0, 3.0, 4.0];
    let direct = max_abs_diff(&dct2_orthonormal(&v, 4).unwrap(), &direct_dct(&v));
    let constant = dct2_orthonormal(&[3.0; 26], 26).unwrap();
    vec![
        Check::below("DCT basis orthonormal", gram_err, 1e-12),
        Check::below("DCT preserves norm", norm_err, 1e-10),
        Check::below("DCT inverse round trip", inv_err, 1e-10),
        Check::below("DCT [1,2,3,4] vs defining sum", direct, 1e-12),
        Check::below(
            "DCT of constant is DC only",
            constant[1..].iter().map(|v| v.abs()).fold(0.0, f64::max),
            1e-12,
        ),
    ]
}

pub fn log_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let floor = 1e-10;
    let e: Vec<f64> = (0..500)
        .map(|i| {
            if i % 10 == 0 {
                0.0
            } else {
                10f64.powf(rng.random_range(-14.0..6.0))
            }
        })
        .collect();
    let back: Vec<f64> = log_energies(&e, floor).iter().map(|v| v.exp()).collect();
    let worst = e
        .iter()
        .zip(&back)
        .map(|(x, y)| (x.max(floor) - y).abs() / x.max(floor))
        .fold(0.0, f64::max);
    Check::below("exp(log) = max(E, floor), relative", worst, 1e-12)
}

/// Regression deltas by the textbook formula with replicated edges.
pub fn direct_deltas(f: &Array2<f64>, w: usize) -> Array2<f64> {
    let (rows, cols) = f.dim();
    let denom: f64 = 2.0 * (1..=w).map(|k| (k * k) as f64).sum::<f64>();
    Array2::from_shape_fn((rows, cols), |(r, t)| {
        let mut num = 0.0;
        for k in 1..=w {
            let fwd = (t + k).min(cols - 1);
            let back = t.saturating_sub(k);
            num += k as f64 * (f[[r, fwd]] - f[[r, back]]);
        }
        num / denom
    })
}

pub fn deltas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let f = Array2::from_shape_vec((3, 20), randu(&mut rng, 60)).unwrap();
    let got = delta_features(&f, 2).unwrap();
    let want = direct_deltas(&f, 2);
    Check::below(
        "deltas vs regression formula",
        max_abs_diff(got.as_slice().unwrap(), want.as_slice().unwrap()),
        1e-12,
    )
}

pub fn suite() -> Vec<Check> {
    let mut out = vec![parseval(), power_matches_direct_dft()];
    out.extend(cosine_at_bin_four());
    out.extend(mel_scale());
    out.push(filterbank_shape());
    out.push(filterbank_direct());
    out.push(filterbank_linearity());
    out.extend(dct());
    out.push(log_round_trip());
    out.push(deltas());
    out
}
