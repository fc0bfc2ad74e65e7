use ndarray::Array2;
use pcg_core::dsp::{
    dct2_orthonormal, delta_features, frame_signal, log_energies, power_spectrum, Dct2, FrameSpec, MelFilterbank,
    Spectrum, WindowFn,
};
use pcg_oracles::{assert_all, dsp_checks};
use proptest::prelude::*;

#[test]
fn identity_suite() {
    assert_all(&dsp_checks::suite());
}

#[test]
fn impulse_and_silence() {
    let mut x = vec![0.0; 64];
    x[0] = 1.0;
    assert!(power_spectrum(&x, 64)
        .unwrap()
        .power
        .iter()
        .all(|&p| (p - 1.0).abs() < 1e-12));
    assert!(power_spectrum(&[0.0; 50], 64).unwrap().power.iter().all(|&p| p == 0.0));
}

#[test]
fn flat_spectrum_energy_scales_with_level() {
    let fb = MelFilterbank::new(26, 1000.0, 64, 0.0, 500.0).unwrap();
    let one = fb.apply(&Spectrum { power: vec![1.0; 33] }).unwrap();
    let three = fb.apply(&Spectrum { power: vec![3.0; 33] }).unwrap();
    for (a, b) in one.iter().zip(&three) {
        assert!((b - 3.0 * a).abs() < 1e-12);
    }
    assert!(fb
        .apply(&Spectrum { power: vec![0.0; 33] })
        .unwrap()
        .iter()
        .all(|&e| e == 0.0));
}

#[test]
fn log_of_floor() {
    assert_eq!(log_energies(&[0.0], 1e-10), vec![1e-10f64.ln()]);
    let e = std::f64::consts::E;
    let l = log_energies(&[1.0, e, e * e], 1e-10);
    for (got, want) in l.iter().zip([0.0, 1.0, 2.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn deltas_of_constants_and_ramps() {
    let c = Array2::from_elem((2, 10), 4.0);
    assert!(delta_features(&c, 2).unwrap().iter().all(|&v| v == 0.0));
    let ramp = Array2::from_shape_fn((1, 12), |(_, t)| 0.5 * t as f64);
    let d = delta_features(&ramp, 2).unwrap();
    for t in 2..10 {
        assert!((d[[0, t]] - 0.5).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn parseval_rectangular(x in prop::collection::vec(-10.0f64..10.0, 1..=64)) {
        let p = power_spectrum(&x, 64).unwrap().power;
        let full = p[0] + p[32] + 2.0 * p[1..32].iter().sum::<f64>();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((energy - full / 64.0).abs() <= 1e-9 * energy.max(1e-12));
    }

    #[test]
    fn filterbank_is_linear(
        p1 in prop::collection::vec(0.0f64..100.0, 33),
        p2 in prop::collection::vec(0.0f64..100.0, 33),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let fb = MelFilterbank::new(26, 1000.0, 64, 0.0, 500.0).unwrap();
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
        let lhs = fb.apply(&Spectrum { power: mix }).unwrap();
        let e1 = fb.apply(&Spectrum { power: p1 }).unwrap();
        let e2 = fb.apply(&Spectrum { power: p2 }).unwrap();
        for i in 0..26 {
            let scale = 1.0 + (a * e1[i]).abs() + (b * e2[i]).abs();
            prop_assert!((lhs[i] - (a * e1[i] + b * e2[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn dct_preserves_norm_and_inverts(v in prop::collection::vec(-100.0f64..100.0, 1..40)) {
        let d = Dct2::new(v.len()).unwrap();
        let c = d.forward(&v, v.len()).unwrap();
        let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() <= 1e-10 * n0.max(1.0));
        let back = d.inverse(&c).unwrap();
        for (x, y) in back.iter().zip(&v) {
            prop_assert!((x - y).abs() <= 1e-10 * n0.max(1.0));
        }
        let direct = dsp_checks::direct_dct(&v);
        let truncated = dct2_orthonormal(&v, v.len().min(13)).unwrap();
        for (x, y) in truncated.iter().zip(&direct) {
            prop_assert!((x - y).abs() <= 1e-9 * n0.max(1.0));
        }
    }

    #[test]
    fn log_inverts_exp_above_floor(l in prop::collection::vec(-20.0f64..20.0, 1..50)) {
        let e: Vec<f64> = l.iter().map(|v| v.exp()).collect();
        for (got, want) in log_energies(&e, 1e-10).iter().zip(&l) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_count_matches_formula(len in 50usize..3000, hop in 1usize..40) {
        let spec = FrameSpec::new(50, hop, WindowFn::Hamming, 64).unwrap();
        let x = vec![0.5; len];
        prop_assert_eq!(frame_signal(&x, &spec).unwrap().len(), (len - 50) / hop + 1);
    }

    #[test]
    fn deltas_match_regression_formula(v in prop::collection::vec(-5.0f64..5.0, 60), w in 1usize..4) {
        let f = Array2::from_shape_vec((3, 20), v).unwrap();
        let got = delta_features(&f, w).unwrap();
        let want = dsp_checks::direct_deltas(&f, w);
        for (a, b) in got.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
