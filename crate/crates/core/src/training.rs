//! Optimization loop: class- and domain-balanced mini-batches, time-shift
//! augmentation, Nesterov-momentum SGD under a triangular cyclic learning
//! rate, and a first-layer noise diagnostic.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureKind};
use crate::model::{self, Batch, ModelConfig, ModelParams, ParamMap, Scalar, Tensor};
use crate::preprocess::CycleSegment;
use crate::{Label, CYCLE_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Segments per mini-batch; must be even so both classes get equal halves.
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Peak of the triangle. Equal to `base_lr` gives a constant rate.
    pub max_lr: f64,
    /// Half-period in iterations; `None` means four epochs' worth of batches.
    pub clr_step_size: Option<usize>,
    pub momentum: f64,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 60,
            base_lr: 1e-3,
            max_lr: 1e-2,
            clr_step_size: None,
            momentum: 0.9,
            max_shift: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::param(format!(
                "batch size {} must be positive and even",
                self.batch_size
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite() && self.max_lr.is_finite()) || self.max_lr < self.base_lr {
            return Err(Error::param(format!(
                "need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.max_shift >= CYCLE_LEN {
            return Err(Error::param(format!("max shift {} exceeds the cycle", self.max_shift)));
        }
        if self.clr_step_size == Some(0) {
            return Err(Error::param("clr step size must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self, batches_per_epoch: usize) -> ClrSchedule {
        ClrSchedule {
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            step_size: self.clr_step_size.unwrap_or(4 * batches_per_epoch.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClrSchedule {
    pub base_lr: f64,
    pub max_lr: f64,
    pub step_size: usize,
}

/// Triangular cyclic learning rate: `base` at iteration 0, `max` at
/// `step_size`, back to `base` at `2 * step_size`.
pub fn clr_lr(iteration: usize, s: &ClrSchedule) -> f64 {
    let step = s.step_size.max(1) as f64;
    let t = iteration as f64 / step;
    let cycle = (t / 2.0).floor();
    let x = (t - (2.0 * cycle + 1.0)).abs();
    s.base_lr + (s.max_lr - s.base_lr) * (1.0 - x).max(0.0)
}

/// Class and domain of one training segment, as seen by the sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub label: Label,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanItem {
    /// Position in the corpus index.
    pub index: usize,
    pub label: Label,
    pub domain: String,
    pub shift: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    pub items: Vec<PlanItem>,
}

impl BatchPlan {
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for it in &self.items {
            c[it.label.index()] += 1;
        }
        c
    }

    pub fn domain_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for it in &self.items {
            *m.entry(it.domain.as_str()).or_default() += 1;
        }
        m
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mini-batches for one epoch. Each batch holds `batch_size / 2` segments
/// per class. Within a class the draws are spread evenly over its non-empty
/// domains, and leftover draws go to domains picked by a cursor that keeps
/// rotating across both classes and across batches. Segments are drawn
/// uniformly with replacement inside each (class, domain) cell, and each
/// gets a uniform shift in `[-max_shift, max_shift]`.
pub fn dbt_batches(index: &[IndexEntry], cfg: &TrainConfig, epoch: usize) -> Result<Vec<BatchPlan>> {
    cfg.validate()?;
    let mut cells: [BTreeMap<&str, Vec<usize>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (i, e) in index.iter().enumerate() {
        cells[e.label.index()].entry(e.domain.as_str()).or_default().push(i);
    }
    for label in Label::ALL {
        if cells[label.index()].is_empty() {
            return Err(Error::Empty(format!("no {label} segments in the training set")));
        }
    }
    let cells: Vec<Vec<(&str, &Vec<usize>)>> = cells.iter().map(|m| m.iter().map(|(d, v)| (*d, v)).collect()).collect();

    let half = cfg.batch_size / 2;
    let n_batches = index.len().div_ceil(cfg.batch_size);
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut cursor = 0usize;
    let shift = cfg.max_shift as i64;
    let mut plans = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut items = Vec::with_capacity(cfg.batch_size);
        for label in Label::ALL {
            let class_cells = &cells[label.index()];
            let k = class_cells.len();
            let mut draws = vec![half / k; k];
            for _ in 0..half % k {
                draws[cursor % k] += 1;
                cursor += 1;
            }
            for (&(domain, members), &count) in class_cells.iter().zip(&draws) {
                for _ in 0..count {
                    items.push(PlanItem {
                        index: members[rng.random_range(0..members.len())],
                        label,
                        domain: domain.to_string(),
                        shift: rng.random_range(-shift..=shift),
                    });
                }
            }
        }
        plans.push(BatchPlan { items });
    }
    Ok(plans)
}

/// Moves samples right by `offset` (left when negative), zero-filling the
/// vacated end. Samples pushed past the edge are dropped.
pub fn shift_augment(seg: &CycleSegment, offset: i64, max_shift: usize) -> Result<CycleSegment> {
    if offset.unsigned_abs() > max_shift as u64 {
        return Err(Error::param(format!("shift {offset} exceeds ±{max_shift}")));
    }
    let n = seg.samples.len();
    let mut out = vec![0.0; n];
    let k = offset.unsigned_abs() as usize;
    if k < n {
        if offset >= 0 {
            out[k..].copy_from_slice(&seg.samples[..n - k]);
        } else {
            out[..n - k].copy_from_slice(&seg.samples[k..]);
        }
    }
    Ok(CycleSegment {
        samples: out,
        parent: seg.parent.clone(),
        cycle_index: seg.cycle_index,
    })
}

pub fn zero_velocity<T: Scalar>(params: &ModelParams<T>) -> ParamMap<T> {
    params
        .trainable_names()
        .iter()
        .map(|n| (n.clone(), Tensor::zeros(&params.get(n).shape)))
        .collect()
}

/// `v' = μ v − lr g`, `θ' = θ + v'`. The caller supplies `g` evaluated at
/// the look-ahead point `θ + μ v` (see [`lookahead`]). Nothing is modified
/// when any gradient entry is non-finite.
pub fn sgd_nesterov_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ParamMap<T>,
    velocity: &mut ParamMap<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let names = params.trainable_names().to_vec();
    for name in &names {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::shape(format!("no gradient for {name}")))?;
        let v = velocity
            .get(name)
            .ok_or_else(|| Error::shape(format!("no velocity for {name}")))?;
        let p = params.get(name);
        if g.shape != p.shape || v.shape != p.shape {
            return Err(Error::shape(format!("{name}: gradient or velocity shape differs")));
        }
        if g.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!("non-finite gradient in {name}")));
        }
    }
    let (lr, mu) = (T::lit(lr), T::lit(momentum));
    for name in &names {
        let g = &grads[name];
        let v = velocity.get_mut(name).expect("checked");
        let p = params.get_mut(name).expect("checked");
        for ((pv, vv), &gv) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// `θ + μ v` for the trainable tensors; everything else copied as is.
pub fn lookahead<T: Scalar>(params: &ModelParams<T>, velocity: &ParamMap<T>, momentum: f64) -> ModelParams<T> {
    let mut out = params.clone();
    if momentum == 0.0 {
        return out;
    }
    let mu = T::lit(momentum);
    for (name, v) in velocity {
        if let Some(p) = out.get_mut(name) {
            p.data.iter_mut().zip(&v.data).for_each(|(p, &v)| *p += mu * v);
        }
    }
    out
}

/// One labelled training cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSegment {
    pub segment: CycleSegment,
    pub label: Label,
    pub domain: String,
}

/// Feature pipeline that turns (augmented) waveforms into network inputs.
#[derive(Debug, Clone, Copy)]
pub struct Featurizer<'a> {
    pub extractor: &'a FeatureExtractor,
    pub kind: &'a FeatureKind,
}

impl Featurizer<'_> {
    pub fn input_shape(&self) -> (usize, usize) {
        (self.kind.rows(), self.extractor.config().frame.num_frames(CYCLE_LEN))
    }

    pub fn matrix(&self, seg: &CycleSegment) -> Result<Array2<f64>> {
        Ok(self.extractor.extract_normalized(seg, self.kind)?.values)
    }

    /// Full-size model configuration matching this pipeline's input shape.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let (rows, cols) = self.input_shape();
        let cfg = ModelConfig::new(rows)?;
        ModelConfig::reduced(rows, cols, cfg.stem_width, cfg.widths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iterations completed so far.
    pub iteration: usize,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    /// Mean training-mode loss over the epoch's batches.
    pub loss: f64,
    /// Fraction of augmented training segments classified correctly.
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the end of the lowest-loss epoch (initialization when
    /// no epoch ran).
    pub params: ModelParams<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

fn assemble(
    corpus: &[TrainSegment],
    plan: &BatchPlan,
    feat: Featurizer<'_>,
    max_shift: usize,
) -> Result<(Batch<f32>, Vec<usize>)> {
    let mut mats = Vec::with_capacity(plan.items.len());
    for it in &plan.items {
        let seg = shift_augment(&corpus[it.index].segment, it.shift, max_shift)?;
        mats.push(feat.matrix(&seg)?);
    }
    let labels = plan.items.iter().map(|it| it.label.index()).collect();
    Ok((Batch::from_matrices(&mats)?, labels))
}

fn check_model(model: &ModelConfig, feat: Featurizer<'_>) -> Result<()> {
    let shape = feat.input_shape();
    if (model.input_rows, model.input_cols) != shape {
        return Err(Error::shape(format!(
            "model input {}×{} does not match features {}×{}",
            model.input_rows, model.input_cols, shape.0, shape.1
        )));
    }
    Ok(())
}

/// Trains from a seeded initialization. Each iteration draws a balanced
/// batch, shifts and featurizes its waveforms, takes the gradient at the
/// Nesterov look-ahead point, and steps with the cyclic rate. Batch-norm
/// running statistics follow the look-ahead forward passes.
pub fn fit(
    corpus: &[TrainSegment],
    feat: Featurizer<'_>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    check_model(model_cfg, feat)?;
    let init = model::init_model::<f32>(model_cfg, cfg.seed)?;
    fit_from(corpus, feat, init, cfg)
}

/// [`fit`] starting from given parameters.
pub fn fit_from(
    corpus: &[TrainSegment],
    feat: Featurizer<'_>,
    init: ModelParams<f32>,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    check_model(init.config(), feat)?;
    let index: Vec<IndexEntry> = corpus
        .iter()
        .map(|s| IndexEntry {
            label: s.label,
            domain: s.domain.clone(),
        })
        .collect();
    let mut params = init;
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut velocity = zero_velocity(&params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    let mut schedule = None;

    for epoch in 0..cfg.epochs {
        let plans = dbt_batches(&index, cfg, epoch)?;
        let sched = *schedule.get_or_insert_with(|| cfg.schedule(plans.len()));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = cfg.base_lr;
        for plan in &plans {
            let (batch, labels) = assemble(corpus, plan, feat, cfg.max_shift)?;
            lr = clr_lr(iteration, &sched);
            let ahead = lookahead(&params, &velocity, cfg.momentum);
            let lg = model::loss_and_grad(&ahead, &batch, &labels)?;
            if !lg.loss.is_finite() {
                return Err(Error::Diverged(format!("loss is {} at iteration {iteration}", lg.loss)));
            }
            sgd_nesterov_step(&mut params, &lg.grads, &mut velocity, lr, cfg.momentum)?;
            params.update_running_stats(&lg.bn_stats);
            loss_sum += lg.loss;
            correct += lg
                .probs
                .chunks(model::NUM_CLASSES)
                .zip(&labels)
                .filter(|(p, &l)| model::decide(p).label.index() == l)
                .count();
            seen += labels.len();
            iteration += 1;
        }
        let rec = EpochRecord {
            epoch,
            iteration,
            lr,
            loss: loss_sum / plans.len().max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
        };
        log::info!(
            "epoch {} loss {:.4} acc {:.3} lr {:.2e}",
            rec.epoch,
            rec.loss,
            rec.train_acc,
            rec.lr
        );
        if rec.loss < best_loss {
            best_loss = rec.loss;
            best = params.clone();
            best_epoch = Some(epoch);
        }
        log.push(rec);
    }
    Ok(FitOutcome {
        params: best,
        log,
        best_epoch,
    })
}

/// Learning-rate range test: trains from `init` for `steps` iterations
/// while the rate rises linearly from `lr_min` to `lr_max`, returning the
/// `(lr, loss)` trace. Stops early once the loss diverges.
pub fn lr_range_test(
    corpus: &[TrainSegment],
    feat: Featurizer<'_>,
    init: ModelParams<f32>,
    cfg: &TrainConfig,
    (lr_min, lr_max): (f64, f64),
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    check_model(init.config(), feat)?;
    if !(lr_min > 0.0 && lr_max > lr_min) || steps < 2 {
        return Err(Error::param(
            "range test needs 0 < lr_min < lr_max and at least 2 steps",
        ));
    }
    let index: Vec<IndexEntry> = corpus
        .iter()
        .map(|s| IndexEntry {
            label: s.label,
            domain: s.domain.clone(),
        })
        .collect();
    let mut params = init;
    let mut velocity = zero_velocity(&params);
    let mut trace = Vec::with_capacity(steps);
    let mut plans = Vec::new().into_iter();
    let mut epoch = 0;
    for step in 0..steps {
        let plan = match plans.next() {
            Some(p) => p,
            None => {
                plans = dbt_batches(&index, cfg, epoch)?.into_iter();
                epoch += 1;
                plans.next().expect("at least one batch")
            }
        };
        let lr = lr_min + (lr_max - lr_min) * step as f64 / (steps - 1) as f64;
        let (batch, labels) = assemble(corpus, &plan, feat, cfg.max_shift)?;
        let ahead = lookahead(&params, &velocity, cfg.momentum);
        let lg = model::loss_and_grad(&ahead, &batch, &labels)?;
        trace.push((lr, lg.loss));
        if !lg.loss.is_finite() || sgd_nesterov_step(&mut params, &lg.grads, &mut velocity, lr, cfg.momentum).is_err() {
            break;
        }
        params.update_running_stats(&lg.bn_stats);
    }
    Ok(trace)
}

/// 2-D cross-correlation with a 3×3 kernel and one sample of zero padding,
/// as the first network layer computes it before bias and normalization.
pub fn correlate3x3(f: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    assert_eq!(k.len(), 9, "3×3 kernel expected");
    let (h, w) = f.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for ky in 0..3 {
            for kx in 0..3 {
                let (sy, sx) = (y + ky, x + kx);
                if sy >= 1 && sx >= 1 && sy - 1 < h && sx - 1 < w {
                    acc += k[ky * 3 + kx] * f[(sy - 1, sx - 1)];
                }
            }
        }
        acc
    })
}

fn mean_matrix(set: &[Array2<f64>], what: &str) -> Result<Array2<f64>> {
    let first = set.first().ok_or_else(|| Error::Empty(format!("{what} feature set")))?;
    let mut acc = Array2::zeros(first.dim());
    for m in set {
        if m.dim() != first.dim() {
            return Err(Error::shape(format!(
                "{what} features mix {:?} and {:?}",
                first.dim(),
                m.dim()
            )));
        }
        acc += m;
    }
    Ok(acc / set.len() as f64)
}

/// `mean_j ‖mean_n(F_n ⊗ K_j)‖ / mean_j ‖mean_c(F_c ⊗ K_j)‖` over the
/// first-layer kernels `K_j`, with Frobenius norms. Values near zero mean
/// the kernels respond to the noise component with zero expectation.
pub fn noise_orthogonality_stat<T: Scalar>(
    params: &ModelParams<T>,
    noise: &[Array2<f64>],
    clean: &[Array2<f64>],
) -> Result<f64> {
    // Correlation is linear, so the mean response is the response to the mean.
    let mn = mean_matrix(noise, "noise")?;
    let mc = mean_matrix(clean, "clean")?;
    let kernels = params.first_layer_kernels();
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let avg = |f: &Array2<f64>| kernels.iter().map(|k| norm(&correlate3x3(f, k))).sum::<f64>() / kernels.len() as f64;
    let denom = avg(&mc);
    if denom == 0.0 {
        return Err(Error::param("clean features give a zero first-layer response"));
    }
    Ok(avg(&mn) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(spec: &[(Label, &str, usize)]) -> Vec<IndexEntry> {
        spec.iter()
            .flat_map(|&(label, d, n)| {
                (0..n).map(move |_| IndexEntry {
                    label,
                    domain: d.to_string(),
                })
            })
            .collect()
    }

    fn cfg(batch: usize) -> TrainConfig {
        TrainConfig {
            batch_size: batch,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_draw_per_cell() {
        let mut spec = Vec::new();
        for d in ["a", "b", "c", "d"] {
            spec.push((Label::Normal, d, 5));
            spec.push((Label::Abnormal, d, 3));
        }
        let idx = entries(&spec);
        let plans = dbt_batches(&idx, &cfg(8), 0).unwrap();
        assert_eq!(plans.len(), 4);
        for p in &plans {
            let mut cells = BTreeMap::new();
            for it in &p.items {
                *cells.entry((it.label, it.domain.clone())).or_insert(0) += 1;
                assert_eq!(idx[it.index].label, it.label);
                assert_eq!(idx[it.index].domain, it.domain);
            }
            assert_eq!(cells.len(), 8);
            assert!(cells.values().all(|&c| c == 1));
        }
    }

    #[test]
    fn single_class_domain() {
        let idx = entries(&[
            (Label::Normal, "a", 10),
            (Label::Abnormal, "a", 10),
            (Label::Normal, "b", 10),
            (Label::Abnormal, "b", 4),
            (Label::Normal, "c", 3),
            (Label::Abnormal, "c", 12),
            (Label::Normal, "d", 7),
            (Label::Abnormal, "d", 7),
            (Label::Normal, "e", 40),
        ]);
        for p in dbt_batches(&idx, &cfg(16), 2).unwrap() {
            assert_eq!(p.class_counts(), [8, 8]);
            for label in Label::ALL {
                let mut per = BTreeMap::new();
                for it in p.items.iter().filter(|i| i.label == label) {
                    *per.entry(it.domain.clone()).or_insert(0) += 1;
                }
                let (lo, hi) = (per.values().min().unwrap(), per.values().max().unwrap());
                assert!(hi - lo <= 1, "{per:?}");
            }
        }
    }

    #[test]
    fn domain_totals_balanced_when_domains_hold_both_classes() {
        let idx = entries(&[
            (Label::Normal, "x", 9),
            (Label::Abnormal, "x", 2),
            (Label::Normal, "y", 1),
            (Label::Abnormal, "y", 20),
            (Label::Normal, "z", 5),
            (Label::Abnormal, "z", 5),
        ]);
        for p in dbt_batches(&idx, &cfg(32), 0).unwrap() {
            let counts = p.domain_counts();
            let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn plans_are_seeded() {
        let idx = entries(&[(Label::Normal, "a", 30), (Label::Abnormal, "b", 30)]);
        let c = cfg(8);
        assert_eq!(dbt_batches(&idx, &c, 3).unwrap(), dbt_batches(&idx, &c, 3).unwrap());
        assert_ne!(dbt_batches(&idx, &c, 3).unwrap(), dbt_batches(&idx, &c, 4).unwrap());
        assert_eq!(dbt_batches(&idx, &c, 0).unwrap().len(), 8);
    }

    #[test]
    fn missing_class_and_bad_batch() {
        let idx = entries(&[(Label::Normal, "a", 5)]);
        assert!(matches!(dbt_batches(&idx, &cfg(8), 0), Err(Error::Empty(_))));
        let idx = entries(&[(Label::Normal, "a", 5), (Label::Abnormal, "a", 5)]);
        assert!(dbt_batches(&idx, &cfg(7), 0).is_err());
    }

    #[test]
    fn shift_moves_impulse() {
        let mut samples = vec![0.0; CYCLE_LEN];
        samples[0] = 1.0;
        let seg = CycleSegment {
            samples,
            parent: "r".into(),
            cycle_index: 0,
        };
        let s = shift_augment(&seg, 250, 250).unwrap();
        assert_eq!(s.samples[250], 1.0);
        assert_eq!(s.samples.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(shift_augment(&seg, 0, 250).unwrap(), seg);
        let back = shift_augment(&s, -250, 250).unwrap();
        assert_eq!(back.samples, seg.samples);
        assert!(shift_augment(&seg, 251, 250).is_err());
        assert!(shift_augment(&seg, -251, 250).is_err());
    }

    #[test]
    fn triangle_schedule() {
        let s = ClrSchedule {
            base_lr: 1e-3,
            max_lr: 1e-2,
            step_size: 10,
        };
        assert!((clr_lr(0, &s) - 1e-3).abs() < 1e-15);
        assert!((clr_lr(10, &s) - 1e-2).abs() < 1e-15);
        assert!((clr_lr(20, &s) - 1e-3).abs() < 1e-15);
        assert!((clr_lr(5, &s) - 5.5e-3).abs() < 1e-15);
        assert!((clr_lr(15, &s) - 5.5e-3).abs() < 1e-15);
    }

    #[test]
    fn default_step_is_four_epochs() {
        assert_eq!(TrainConfig::default().schedule(7).step_size, 28);
    }

    fn scalar_params(theta: f64) -> ModelParams<f64> {
        let cfg = ModelConfig::reduced(13, 4, 1, [1, 1, 1, 1]).unwrap();
        let mut p = model::init_model::<f64>(&cfg, 0).unwrap();
        for name in p.trainable_names().to_vec() {
            p.get_mut(&name).unwrap().data.iter_mut().for_each(|v| *v = theta);
        }
        p
    }

    #[test]
    fn momentum_zero_is_plain_sgd() {
        let mut p = scalar_params(1.0);
        let grads: ParamMap<f64> = p
            .trainable_names()
            .iter()
            .map(|n| (n.clone(), Tensor::filled(&p.get(n).shape, 0.5)))
            .collect();
        let mut v = zero_velocity(&p);
        sgd_nesterov_step(&mut p, &grads, &mut v, 0.1, 0.0).unwrap();
        assert!(p.get("fc.weight").data.iter().all(|&x| (x - 0.95).abs() < 1e-15));
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar_params(0.3);
        let before = p.clone();
        let grads = zero_velocity(&p);
        let mut v = zero_velocity(&p);
        sgd_nesterov_step(&mut p, &grads, &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_diverges_without_update() {
        let mut p = scalar_params(0.3);
        let before = p.clone();
        let mut grads = zero_velocity(&p);
        grads.get_mut("fc.bias").unwrap().data[0] = f64::NAN;
        let mut v = zero_velocity(&p);
        let err = sgd_nesterov_step(&mut p, &grads, &mut v, 0.1, 0.9).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
        assert!(err.to_string().contains("training diverged"));
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = ½θ², gradient θ at the look-ahead point.
        let mut p = scalar_params(1.0);
        let mut v = zero_velocity(&p);
        let (lr, mu) = (0.1, 0.9);
        for _ in 0..200 {
            let ahead = lookahead(&p, &v, mu);
            let grads: ParamMap<f64> = p
                .trainable_names()
                .iter()
                .map(|n| (n.clone(), ahead.get(n).clone()))
                .collect();
            sgd_nesterov_step(&mut p, &grads, &mut v, lr, mu).unwrap();
        }
        // Independent scalar recurrence.
        let (mut th, mut vel) = (1.0f64, 0.0f64);
        for _ in 0..200 {
            let g = th + mu * vel;
            vel = mu * vel - lr * g;
            th += vel;
        }
        let got = p.get("fc.weight").data[0];
        assert!(got.abs() < 1e-3);
        assert!((got - th).abs() < 1e-12);
    }

    #[test]
    fn correlation_with_center_tap_is_identity() {
        let f = Array2::from_shape_fn((4, 5), |(r, c)| (r * 5 + c) as f64);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(correlate3x3(&f, &k), f);
        k[4] = 0.0;
        k[5] = 1.0;
        let g = correlate3x3(&f, &k);
        assert_eq!(g[(0, 0)], f[(0, 1)]);
        assert_eq!(g[(0, 4)], 0.0);
    }

    #[test]
    fn zero_noise_gives_zero_ratio() {
        let cfg = ModelConfig::reduced(13, 20, 4, [2, 2, 2, 2]).unwrap();
        let p = model::init_model::<f32>(&cfg, 1).unwrap();
        let clean = vec![Array2::from_shape_fn((13, 20), |(r, c)| (r as f64 - c as f64).sin())];
        let noise = vec![Array2::zeros((13, 20)); 3];
        assert_eq!(noise_orthogonality_stat(&p, &noise, &clean).unwrap(), 0.0);
        assert!(noise_orthogonality_stat(&p, &[], &clean).is_err());
    }
}
