use std::collections::BTreeMap;

use ndarray::Array2;
use pcg_core::eval::RecordingResult;
use pcg_core::features::FeatureKind;
use pcg_core::formats::manifest::{self, Manifest, ManifestRow, Split};
use pcg_core::formats::{checkpoint, feature_cache, onsets, report, wav};
use pcg_core::model::{init_model, ModelConfig};
use pcg_core::Label;
use proptest::prelude::*;

fn label(b: bool) -> Label {
    if b {
        Label::Abnormal
    } else {
        Label::Normal
    }
}

#[test]
fn checkpoint_bytes_round_trip() {
    let p = init_model::<f32>(&ModelConfig::reduced(13, 30, 2, [2, 2, 2, 2]).unwrap(), 4).unwrap();
    let bytes = checkpoint::encode(&p);
    assert_eq!(&bytes[..4], b"PCGM");
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, p);
    assert_eq!(checkpoint::encode(&back), bytes);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let p = init_model::<f32>(&ModelConfig::reduced(13, 30, 2, [2, 2, 2, 2]).unwrap(), 4).unwrap();
    let bytes = checkpoint::encode(&p);
    for cut in [0, 3, 8, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

proptest! {
    #[test]
    fn feature_cache_round_trip(
        cols in 1usize..40,
        seed in any::<u64>(),
        kind in prop::sample::select(vec!["Fbank", "MFCC13", "Fbank&MFCC13", "MFCC13_DD"]),
    ) {
        let kind = kind.parse::<FeatureKind>().unwrap();
        let rows = kind.rows();
        let values = Array2::from_shape_fn((rows, cols), |(r, c)| {
            ((seed.wrapping_mul(31).wrapping_add((r * cols + c) as u64) % 1000) as f32) * 0.37 - 100.0
        });
        let f = feature_cache::CachedFeatures { kind, values };
        let bytes = feature_cache::encode(&f);
        prop_assert_eq!(&bytes[..4], b"PCGF");
        prop_assert_eq!(feature_cache::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn onsets_round_trip(mut v in prop::collection::btree_set(0usize..1_000_000, 0..30)) {
        let list: Vec<usize> = std::mem::take(&mut v).into_iter().collect();
        prop_assert_eq!(onsets::parse(&onsets::render(&list)).unwrap(), list);
    }

    #[test]
    fn float_wav_round_trip(samples in prop::collection::vec(-1.0f32..1.0, 0..300), rate in 1000u32..48_000) {
        let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        let w = wav::decode(&wav::encode_f32(&x, rate).unwrap()).unwrap();
        prop_assert_eq!(w.sample_rate, rate);
        prop_assert_eq!(w.samples, x);
    }

    #[test]
    fn pcm16_round_trip(samples in prop::collection::vec(-1.0f64..1.0, 0..300)) {
        let w = wav::decode(&wav::encode_pcm16(&samples, 1000).unwrap()).unwrap();
        for (a, b) in w.samples.iter().zip(&samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn manifest_round_trip(
        rows in prop::collection::vec((any::<bool>(), 0usize..3, any::<bool>(), "[a-z0-9 ,\"]{0,8}"), 1..20),
    ) {
        let domains = ["a", "b", "identity"];
        let m = Manifest {
            extra_columns: vec!["note".into()],
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (abn, d, test, note))| ManifestRow {
                    path: format!("wav/r{i}.wav"),
                    label: label(*abn),
                    domain: domains[*d].into(),
                    split: if *test { Split::Test } else { Split::Train },
                    patient_id: format!("p{i}"),
                    extra: BTreeMap::from([("note".to_string(), note.trim().to_string())]),
                })
                .collect(),
        };
        prop_assert_eq!(manifest::parse(&m.to_csv().unwrap()).unwrap(), m);
    }

    #[test]
    fn report_records_round_trip(
        recs in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..=1.0, 0usize..3), 1..20),
    ) {
        let records: Vec<RecordingResult> = recs
            .iter()
            .enumerate()
            .map(|(i, &(t, p, prob, d))| RecordingResult {
                id: format!("r{i}"),
                domain: ["a", "b", "c"][d].into(),
                truth: label(t),
                predicted: label(p),
                p_abnormal: prob,
            })
            .collect();
        let text = report::to_jsonl(&records.iter().map(|r| report::ReportLine::Recording {
            id: r.id.clone(),
            domain: r.domain.clone(),
            truth: r.truth,
            predicted: r.predicted,
            p_abnormal: r.p_abnormal,
        }).collect::<Vec<_>>());
        prop_assert_eq!(report::parse_records(&text).unwrap(), records);
    }
}
