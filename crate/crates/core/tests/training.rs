use std::collections::BTreeMap;

use ndarray::{s, Array2};
use pcg_core::distortion::ChannelKind;
use pcg_core::features::{BaseFeature, FeatureConfig, FeatureExtractor, FeatureKind};
use pcg_core::model::{init_model, loss_and_grad, Batch};
use pcg_core::pipeline::{recording_segments, simulate_corpus, SimulationSpec};
use pcg_core::preprocess::CycleSegment;
use pcg_core::training::{
    clr_lr, dbt_batches, fit, noise_orthogonality_stat, shift_augment, ClrSchedule, Featurizer, IndexEntry,
    TrainConfig, TrainSegment,
};
use pcg_core::{Label, SAMPLE_RATE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise-free corpus with a loud murmur, one cycle per recording.
fn separable_corpus(cycles: usize) -> Vec<TrainSegment> {
    let spec = SimulationSpec {
        per_cell: cycles / 4,
        channels: vec![ChannelKind::Identity, ChannelKind::Resonant],
        snrs_db: vec![f64::INFINITY],
        murmur_level: 0.8,
        seed: 17,
        ..SimulationSpec::default()
    };
    simulate_corpus(&spec, "s_")
        .unwrap()
        .into_iter()
        .map(|r| TrainSegment {
            segment: recording_segments(&r.id, &r.samples, SAMPLE_RATE, Some(&[0]))
                .unwrap()
                .remove(0),
            label: r.label,
            domain: r.channel.to_string(),
        })
        .collect()
}

fn mfcc13() -> FeatureKind {
    FeatureKind::single(BaseFeature::Mfcc13)
}

fn entries(cells: &[(Label, &str, usize)]) -> Vec<IndexEntry> {
    cells
        .iter()
        .flat_map(|&(label, d, n)| {
            (0..n).map(move |_| IndexEntry {
                label,
                domain: d.to_string(),
            })
        })
        .collect()
}

fn config(batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn four_domains_batch_of_eight() {
    let mut cells = Vec::new();
    for d in ["a", "b", "c", "d"] {
        cells.push((Label::Normal, d, 5));
        cells.push((Label::Abnormal, d, 3));
    }
    let index = entries(&cells);
    for plan in dbt_batches(&index, &config(8, 1), 0).unwrap() {
        let mut per_cell: BTreeMap<(Label, &str), usize> = BTreeMap::new();
        for it in &plan.items {
            *per_cell.entry((it.label, it.domain.as_str())).or_default() += 1;
        }
        assert_eq!(per_cell.len(), 8);
        assert!(per_cell.values().all(|&n| n == 1));
    }
}

#[test]
fn single_class_domain_batch_of_sixteen() {
    let mut cells = Vec::new();
    for d in ["a", "b", "c", "d"] {
        cells.push((Label::Normal, d, 10));
        cells.push((Label::Abnormal, d, 10));
    }
    cells.push((Label::Normal, "e", 30));
    let index = entries(&cells);
    let plans = dbt_batches(&index, &config(16, 2), 3).unwrap();
    assert_eq!(plans.len(), index.len().div_ceil(16));
    for plan in &plans {
        assert_eq!(plan.class_counts(), [8, 8]);
        let mut per_cell: BTreeMap<(Label, &str), usize> = BTreeMap::new();
        for it in &plan.items {
            *per_cell.entry((it.label, it.domain.as_str())).or_default() += 1;
        }
        for label in Label::ALL {
            let counts: Vec<usize> = per_cell.iter().filter(|(k, _)| k.0 == label).map(|(_, &v)| v).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{label}: {counts:?}");
        }
    }
    assert_eq!(plans, dbt_batches(&index, &config(16, 2), 3).unwrap());
}

#[test]
fn left_shift_moves_feature_columns() {
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seg = CycleSegment {
        samples: (0..2500).map(|_| rng.random_range(-1.0..1.0)).collect(),
        parent: "x".into(),
        cycle_index: 0,
    };
    let shifted = shift_augment(&seg, -250, 250).unwrap();
    let a = ex.extract(&seg, BaseFeature::Fbank).unwrap().values;
    let b = ex.extract(&shifted, BaseFeature::Fbank).unwrap().values;
    // Frame c of the shifted cycle is frame c + 25 of the original while it
    // stays clear of the zero-filled tail.
    let interior = 221;
    let diff = &b.slice(s![.., ..interior]) - &a.slice(s![.., 25..25 + interior]);
    assert!(diff.iter().all(|v| v.abs() < 1e-12));
    assert!(shift_augment(&seg, 251, 250).is_err());
    assert_eq!(shift_augment(&seg, 0, 250).unwrap(), seg);
}

#[test]
fn fit_separates_a_clean_corpus() {
    let corpus = separable_corpus(200);
    assert_eq!(corpus.len(), 200);
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let kind = mfcc13();
    let feat = Featurizer {
        extractor: &ex,
        kind: &kind,
    };
    let cfg = TrainConfig {
        epochs: 30,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = fit(&corpus, feat, &feat.model_config().unwrap(), &cfg).unwrap();
    assert_eq!(out.log.len(), 30);
    let best = out.log.iter().map(|e| e.train_acc).fold(0.0, f64::max);
    assert!(best >= 0.95, "best train accuracy {best}");
}

#[test]
fn zero_epochs_return_initialization() {
    let corpus = separable_corpus(8);
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let kind = mfcc13();
    let feat = Featurizer {
        extractor: &ex,
        kind: &kind,
    };
    let model_cfg = feat.model_config().unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = fit(&corpus, feat, &model_cfg, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
    assert_eq!(out.params, init_model::<f32>(&model_cfg, 9).unwrap());
}

#[test]
fn fit_is_deterministic() {
    let corpus = separable_corpus(16);
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let kind = mfcc13();
    let feat = Featurizer {
        extractor: &ex,
        kind: &kind,
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let model_cfg = feat.model_config().unwrap();
    let a = fit(&corpus, feat, &model_cfg, &cfg).unwrap();
    let b = fit(&corpus, feat, &model_cfg, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
}

#[test]
fn first_step_without_momentum_is_plain_sgd() {
    let corpus = separable_corpus(8);
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let kind = mfcc13();
    let feat = Featurizer {
        extractor: &ex,
        kind: &kind,
    };
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        base_lr: 0.01,
        max_lr: 0.01,
        momentum: 0.0,
        seed: 6,
        ..TrainConfig::default()
    };
    let model_cfg = feat.model_config().unwrap();
    let out = fit(&corpus, feat, &model_cfg, &cfg).unwrap();
    assert_eq!(out.log[0].iteration, 1);

    let index: Vec<IndexEntry> = corpus
        .iter()
        .map(|s| IndexEntry {
            label: s.label,
            domain: s.domain.clone(),
        })
        .collect();
    let plan = &dbt_batches(&index, &cfg, 0).unwrap()[0];
    let mats: Vec<Array2<f64>> = plan
        .items
        .iter()
        .map(|it| {
            feat.matrix(&shift_augment(&corpus[it.index].segment, it.shift, cfg.max_shift).unwrap())
                .unwrap()
        })
        .collect();
    let labels: Vec<usize> = plan.items.iter().map(|it| it.label.index()).collect();
    let init = init_model::<f32>(&model_cfg, 6).unwrap();
    let lg = loss_and_grad(&init, &Batch::from_matrices(&mats).unwrap(), &labels).unwrap();
    for name in init.trainable_names() {
        let want = init
            .get(name)
            .data
            .iter()
            .zip(&lg.grads[name].data)
            .map(|(p, g)| p - 0.01 * g);
        for (got, want) in out.params.get(name).data.iter().zip(want) {
            assert!((got - want).abs() <= 1e-6, "{name}: {got} vs {want}");
        }
    }
}

#[test]
fn orthogonality_of_zero_noise_and_init_baseline() {
    let p = init_model::<f64>(&pcg_core::model::ModelConfig::new(13).unwrap(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clean: Vec<Array2<f64>> = (0..5)
        .map(|_| Array2::from_shape_fn((13, 246), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let zeros = vec![Array2::zeros((13, 246)); 5];
    assert_eq!(noise_orthogonality_stat(&p, &zeros, &clean).unwrap(), 0.0);
    let r0 = noise_orthogonality_stat(&p, &clean, &clean).unwrap();
    assert!((r0 - 1.0).abs() < 1e-12);
    assert!(noise_orthogonality_stat(&p, &[], &clean).is_err());
}

proptest! {
    #[test]
    fn batches_are_class_and_domain_balanced(
        sizes in prop::collection::vec((0usize..6, 0usize..6), 1..6),
        half in 1usize..12,
        seed in 0u64..100,
    ) {
        let names = ["a", "b", "c", "d", "e", "f"];
        let mut cells = Vec::new();
        for (i, &(n, m)) in sizes.iter().enumerate() {
            cells.push((Label::Normal, names[i], n));
            cells.push((Label::Abnormal, names[i], m));
        }
        let index = entries(&cells);
        let has = |l: Label| index.iter().any(|e| e.label == l);
        prop_assume!(has(Label::Normal) && has(Label::Abnormal));
        for plan in dbt_batches(&index, &config(2 * half, seed), 0).unwrap() {
            prop_assert_eq!(plan.class_counts(), [half, half]);
            for label in Label::ALL {
                let mut per: BTreeMap<&str, usize> = BTreeMap::new();
                for (i, &(n, m)) in sizes.iter().enumerate() {
                    let size = if label == Label::Normal { n } else { m };
                    if size > 0 {
                        per.insert(names[i], 0);
                    }
                }
                for it in plan.items.iter().filter(|it| it.label == label) {
                    *per.get_mut(it.domain.as_str()).unwrap() += 1;
                }
                let lo = per.values().min().unwrap();
                let hi = per.values().max().unwrap();
                prop_assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn clr_is_periodic_and_bounded(it in 0usize..10_000, step in 1usize..200, base in 1e-5f64..1e-2, span in 0.0f64..1e-1) {
        let sched = ClrSchedule { base_lr: base, max_lr: base + span, step_size: step };
        let lr = clr_lr(it, &sched);
        prop_assert!(lr >= base - 1e-15 && lr <= base + span + 1e-15);
        prop_assert!((clr_lr(it + 2 * step, &sched) - lr).abs() < 1e-12);
        prop_assert!((clr_lr(0, &sched) - base).abs() < 1e-15);
        prop_assert!((clr_lr(step, &sched) - base - span).abs() < 1e-12);
    }

    #[test]
    fn shift_keeps_length_and_support(
        body in prop::collection::vec(0.1f64..1.0, 1..200),
        start in 300usize..2000,
        offset in -250i64..=250,
    ) {
        let mut samples = vec![0.0; 2500];
        samples[start..start + body.len()].copy_from_slice(&body);
        let seg = CycleSegment { samples, parent: "p".into(), cycle_index: 0 };
        let out = shift_augment(&seg, offset, 250).unwrap();
        prop_assert_eq!(out.samples.len(), 2500);
        let nz = |s: &[f64]| s.iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(nz(&out.samples), nz(&seg.samples));
    }
}
