//! Residual CNN classifier over `d × T` feature matrices.
//!
//! ```text
//! conv3x3(16)+BN+ReLU -> maxpool 2
//!   -> layer1(16) -> layer2(32) -> layer3(64) -> layer4(128)
//!   -> flatten -> dense(2) -> softmax
//! ```
//!
//! Each layer is a stride-2 residual block with a 1×1 projection skip
//! followed by an identity residual block. All 3×3 convolutions pad by one.

pub mod layers;
mod tensor;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use tensor::{Act, Scalar, Tensor};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::Label;
use layers::*;

pub const NUM_CLASSES: usize = 2;
pub const MIN_INPUT_ROWS: usize = 13;
pub const MAX_INPUT_ROWS: usize = 65;
pub const META_TENSOR: &str = "meta.architecture";

const CONV3: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 1,
    pad: 1,
};
const CONV3_DOWN: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 2,
    pad: 1,
};
const PROJ_DOWN: ConvGeom = ConvGeom {
    kernel: 1,
    stride: 2,
    pad: 0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_rows: usize,
    pub input_cols: usize,
    pub stem_width: usize,
    pub widths: [usize; 4],
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Full-size network for `rows × 246` inputs.
    pub fn new(input_rows: usize) -> Result<Self> {
        let cfg = ModelConfig {
            input_rows,
            input_cols: 246,
            stem_width: 16,
            widths: [16, 32, 64, 128],
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same topology with reduced widths and input length.
    pub fn reduced(input_rows: usize, input_cols: usize, stem_width: usize, widths: [usize; 4]) -> Result<Self> {
        let cfg = ModelConfig {
            input_cols,
            stem_width,
            widths,
            ..ModelConfig::new(input_rows)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_INPUT_ROWS..=MAX_INPUT_ROWS).contains(&self.input_rows) {
            return Err(Error::param(format!(
                "input rows {} outside {MIN_INPUT_ROWS}..={MAX_INPUT_ROWS}",
                self.input_rows
            )));
        }
        if self.input_cols == 0 || self.stem_width == 0 || self.widths.contains(&0) {
            return Err(Error::param("input length and layer widths must be positive"));
        }
        Ok(())
    }

    /// Spatial size after the stem pooling and each residual layer.
    pub fn spatial_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_rows.div_ceil(2), self.input_cols.div_ceil(2))];
        for _ in 0..4 {
            let (h, w) = *dims.last().expect("nonempty");
            dims.push((CONV3_DOWN.out_dim(h), CONV3_DOWN.out_dim(w)));
        }
        dims
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = *self.spatial_dims().last().expect("nonempty");
        self.widths[3] * h * w
    }

    fn to_meta(self) -> Vec<f64> {
        let mut v = vec![self.input_rows, self.input_cols, self.stem_width];
        v.extend(self.widths);
        v.into_iter().map(|x| x as f64).collect()
    }

    fn from_meta(meta: &[f64]) -> Result<Self> {
        let ints: Vec<usize> = meta
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..1e7).contains(&v) {
                    Ok(v as usize)
                } else {
                    Err(Error::format("checkpoint", format!("bad architecture value {v}")))
                }
            })
            .collect::<Result<_>>()?;
        let [rows, cols, stem, w1, w2, w3, w4] = ints[..] else {
            return Err(Error::format("checkpoint", "architecture tensor must hold 7 values"));
        };
        ModelConfig::reduced(rows, cols, stem, [w1, w2, w3, w4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamRole {
    ConvWeight { fan_in: usize, fan_out: usize },
    DenseWeight { fan_in: usize, fan_out: usize },
    Zero,
    One,
    RunningMean,
    RunningVar,
    Meta,
}

impl ParamRole {
    fn trainable(self) -> bool {
        matches!(
            self,
            ParamRole::ConvWeight { .. } | ParamRole::DenseWeight { .. } | ParamRole::Zero | ParamRole::One
        )
    }
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    role: ParamRole,
}

fn push_conv_bn(specs: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    let mut add = |suffix: &str, shape: Vec<usize>, role| {
        specs.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape,
            role,
        })
    };
    add(
        "conv.weight",
        vec![c_out, c_in, k, k],
        ParamRole::ConvWeight {
            fan_in: c_in * k * k,
            fan_out: c_out * k * k,
        },
    );
    add("conv.bias", vec![c_out], ParamRole::Zero);
    add("bn.weight", vec![c_out], ParamRole::One);
    add("bn.bias", vec![c_out], ParamRole::Zero);
    add("bn.running_mean", vec![c_out], ParamRole::RunningMean);
    add("bn.running_var", vec![c_out], ParamRole::RunningVar);
}

/// Every tensor of the network in construction order.
fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    push_conv_bn(&mut specs, "stem", 1, cfg.stem_width, 3);
    let mut c_in = cfg.stem_width;
    for (l, &width) in cfg.widths.iter().enumerate() {
        let layer = l + 1;
        push_conv_bn(&mut specs, &format!("layer{layer}.0.a"), c_in, width, 3);
        push_conv_bn(&mut specs, &format!("layer{layer}.0.b"), width, width, 3);
        push_conv_bn(&mut specs, &format!("layer{layer}.0.skip"), c_in, width, 1);
        push_conv_bn(&mut specs, &format!("layer{layer}.1.a"), width, width, 3);
        push_conv_bn(&mut specs, &format!("layer{layer}.1.b"), width, width, 3);
        c_in = width;
    }
    let flat = cfg.flat_features();
    specs.push(ParamSpec {
        name: "fc.weight".into(),
        shape: vec![NUM_CLASSES, flat],
        role: ParamRole::DenseWeight {
            fan_in: flat,
            fan_out: NUM_CLASSES,
        },
    });
    specs.push(ParamSpec {
        name: "fc.bias".into(),
        shape: vec![NUM_CLASSES],
        role: ParamRole::Zero,
    });
    specs.push(ParamSpec {
        name: META_TENSOR.into(),
        shape: vec![7],
        role: ParamRole::Meta,
    });
    specs
}

pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

/// Named network tensors: weights, biases, batch-norm affine parameters and
/// running statistics, plus one architecture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    tensors: ParamMap<T>,
    trainable: Vec<String>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &ParamMap<T> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Names of the tensors updated by gradient descent, in construction order.
    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.iter().map(|n| self.get(n).len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            trainable: self.trainable.clone(),
        }
    }

    /// Rebuilds parameters from a name → tensor map, checking that the set
    /// of names and every shape matches the architecture it describes.
    pub fn from_tensors(tensors: ParamMap<T>) -> Result<Self> {
        let meta = tensors
            .get(META_TENSOR)
            .ok_or_else(|| Error::format("checkpoint", format!("missing {META_TENSOR}")))?;
        let meta: Vec<f64> = meta.data.iter().map(|v| v.as_f64()).collect();
        let config = ModelConfig::from_meta(&meta)?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} tensors, found {}", specs.len(), tensors.len()),
            ));
        }
        for spec in &specs {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {}", spec.name)))?;
            if t.shape != spec.shape || t.data.len() != spec.shape.iter().product::<usize>() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        spec.name, t.shape, spec.shape
                    ),
                ));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {} is not finite", spec.name),
                ));
            }
            if spec.role == ParamRole::RunningVar && t.data.iter().any(|v| *v <= T::zero()) {
                return Err(Error::format("checkpoint", format!("{} must be positive", spec.name)));
            }
        }
        let trainable = specs
            .iter()
            .filter(|s| s.role.trainable())
            .map(|s| s.name.clone())
            .collect();
        Ok(ModelParams {
            config,
            tensors,
            trainable,
        })
    }

    /// Folds one training batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, BnBatchStats)]) {
        let m = self.config.bn_momentum;
        for (prefix, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var_unbiased)] {
                let t = self
                    .tensors
                    .get_mut(&format!("{prefix}.bn.{suffix}"))
                    .expect("stats reference existing layers");
                for (r, &b) in t.data.iter_mut().zip(batch) {
                    *r = T::lit((1.0 - m) * r.as_f64() + m * b);
                }
            }
        }
    }

    /// First-layer 3×3 kernels, one `Vec` of 9 taps per output channel.
    pub fn first_layer_kernels(&self) -> Vec<Vec<f64>> {
        self.get("stem.conv.weight")
            .data
            .chunks(9)
            .map(|k| k.iter().map(|v| v.as_f64()).collect())
            .collect()
    }
}

/// Xavier-uniform weights, zero biases, unit batch-norm scale. The same
/// seed always yields the same parameters.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = param_specs(cfg);
    let mut tensors = ParamMap::new();
    let mut trainable = Vec::new();
    for spec in &specs {
        let t = match spec.role {
            ParamRole::ConvWeight { fan_in, fan_out } | ParamRole::DenseWeight { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = spec.shape.iter().product();
                Tensor::from_vec(&spec.shape, (0..n).map(|_| T::lit(rng.random_range(-a..a))).collect())
            }
            ParamRole::Zero | ParamRole::RunningMean => Tensor::zeros(&spec.shape),
            ParamRole::One | ParamRole::RunningVar => Tensor::filled(&spec.shape, T::one()),
            ParamRole::Meta => Tensor::from_vec(&spec.shape, cfg.to_meta().into_iter().map(T::lit).collect()),
        };
        if spec.role.trainable() {
            trainable.push(spec.name.clone());
        }
        tensors.insert(spec.name.clone(), t);
    }
    Ok(ModelParams {
        config: *cfg,
        tensors,
        trainable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; caches kept for backward.
    Train,
    /// Running statistics only; samples are independent.
    Infer,
}

/// `B × 1 × rows × cols` input block.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_matrices<'a, I>(matrices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Array2<f64>>,
    {
        let mut data = Vec::new();
        let mut dims = None;
        let mut n = 0;
        for m in matrices {
            match dims {
                None => dims = Some(m.dim()),
                Some(d) if d != m.dim() => {
                    return Err(Error::shape(format!("batch mixes {:?} and {:?} inputs", d, m.dim())))
                }
                _ => {}
            }
            data.extend(m.iter().map(|&v| T::lit(v)));
            n += 1;
        }
        let (rows, cols) = dims.ok_or_else(|| Error::Empty("batch".into()))?;
        Ok(Batch { n, rows, cols, data })
    }

    fn as_act(&self) -> Act<T> {
        Act::from_vec(1, self.n, self.rows, self.cols, self.data.clone())
    }
}

struct UnitCache<T> {
    conv: ConvCache<T>,
    bn: BnCache<T>,
    /// Output after ReLU, when the unit has one.
    relu_out: Option<Act<T>>,
}

struct BlockCache<T> {
    a: UnitCache<T>,
    b: UnitCache<T>,
    skip: Option<UnitCache<T>>,
    out: Act<T>,
}

struct Caches<T> {
    stem: UnitCache<T>,
    pool: PoolCache,
    blocks: Vec<(String, BlockCache<T>)>,
    flat: Vec<T>,
    last_shape: (usize, usize, usize, usize),
}

/// Everything a backward pass needs from the matching forward pass.
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub bn_stats: Vec<(String, BnBatchStats)>,
    caches: Option<Caches<T>>,
}

pub struct ForwardOutput<T> {
    /// `B × 2`, row-major.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub trace: ForwardTrace<T>,
}

struct Pass<'p, T> {
    params: &'p ModelParams<T>,
    mode: Mode,
    bn_stats: Vec<(String, BnBatchStats)>,
}

impl<T: Scalar> Pass<'_, T> {
    fn unit(&mut self, prefix: &str, x: &Act<T>, g: ConvGeom, relu: bool) -> (Act<T>, Option<UnitCache<T>>) {
        let p = self.params;
        let w = p.get(&format!("{prefix}.conv.weight"));
        let (y, conv) = conv2d_forward(x, &w.data, &p.get(&format!("{prefix}.conv.bias")).data, w.shape[0], g);
        let gamma = &p.get(&format!("{prefix}.bn.weight")).data;
        let beta = &p.get(&format!("{prefix}.bn.bias")).data;
        let eps = p.config.bn_eps;
        match self.mode {
            Mode::Train => {
                let (mut z, bn, stats) = batchnorm_forward_train(&y, gamma, beta, eps);
                self.bn_stats.push((prefix.to_string(), stats));
                let relu_out = relu.then(|| {
                    relu_forward(&mut z);
                    z.clone()
                });
                (z, Some(UnitCache { conv, bn, relu_out }))
            }
            Mode::Infer => {
                let mut z = batchnorm_forward_infer(
                    &y,
                    gamma,
                    beta,
                    &p.get(&format!("{prefix}.bn.running_mean")).data,
                    &p.get(&format!("{prefix}.bn.running_var")).data,
                    eps,
                );
                if relu {
                    relu_forward(&mut z);
                }
                (z, None)
            }
        }
    }

    fn block(&mut self, prefix: &str, x: &Act<T>, down: bool) -> (Act<T>, Option<BlockCache<T>>) {
        let g = if down { CONV3_DOWN } else { CONV3 };
        let (a, ca) = self.unit(&format!("{prefix}.a"), x, g, true);
        let (mut out, cb) = self.unit(&format!("{prefix}.b"), &a, CONV3, false);
        let cs = if down {
            let (s, cs) = self.unit(&format!("{prefix}.skip"), x, PROJ_DOWN, false);
            out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += *v);
            cs
        } else {
            out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += *v);
            None
        };
        relu_forward(&mut out);
        let cache = match (ca, cb) {
            (Some(a), Some(b)) => Some(BlockCache {
                a,
                b,
                skip: cs,
                out: out.clone(),
            }),
            _ => None,
        };
        (out, cache)
    }
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>, mode: Mode) -> Result<ForwardOutput<T>> {
    let cfg = params.config;
    if batch.n == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if (batch.rows, batch.cols) != (cfg.input_rows, cfg.input_cols) {
        return Err(Error::shape(format!(
            "model expects {}×{} inputs, got {}×{}",
            cfg.input_rows, cfg.input_cols, batch.rows, batch.cols
        )));
    }
    let mut pass = Pass {
        params,
        mode,
        bn_stats: Vec::new(),
    };
    let (stem, stem_cache) = pass.unit("stem", &batch.as_act(), CONV3, true);
    let (mut x, pool) = maxpool2_forward(&stem);
    let mut blocks = Vec::new();
    for layer in 1..=4 {
        for b in 0..2 {
            let prefix = format!("layer{layer}.{b}");
            let (y, cache) = pass.block(&prefix, &x, b == 0);
            if let Some(c) = cache {
                blocks.push((prefix, c));
            }
            x = y;
        }
    }
    let flat = flatten(&x);
    let fc_w = params.get("fc.weight");
    let logits_t = dense_forward(&flat, x.n, &fc_w.data, &params.get("fc.bias").data, NUM_CLASSES);
    let logits: Vec<f64> = logits_t.iter().map(|v| v.as_f64()).collect();
    let probs = softmax(&logits, NUM_CLASSES);
    let caches = stem_cache.map(|stem| Caches {
        stem,
        pool,
        blocks,
        flat,
        last_shape: (x.c, x.n, x.h, x.w),
    });
    Ok(ForwardOutput {
        logits,
        probs,
        trace: ForwardTrace {
            mode,
            bn_stats: pass.bn_stats,
            caches,
        },
    })
}

struct Back<'p, T> {
    params: &'p ModelParams<T>,
    grads: ParamMap<T>,
}

impl<T: Scalar> Back<'_, T> {
    fn put(&mut self, name: String, data: Vec<T>) {
        let shape = self.params.get(&name).shape.clone();
        self.grads.insert(name, Tensor::from_vec(&shape, data));
    }

    fn unit(&mut self, prefix: &str, mut dy: Act<T>, cache: &UnitCache<T>, need_dx: bool) -> Option<Act<T>> {
        if let Some(out) = &cache.relu_out {
            relu_backward(&mut dy, out);
        }
        let gamma = &self.params.get(&format!("{prefix}.bn.weight")).data;
        let (dconv, dgamma, dbeta) = batchnorm_backward(&dy, &cache.bn, gamma);
        let w = &self.params.get(&format!("{prefix}.conv.weight")).data;
        let g = conv2d_backward(&dconv, &cache.conv, w, need_dx);
        self.put(format!("{prefix}.bn.weight"), dgamma);
        self.put(format!("{prefix}.bn.bias"), dbeta);
        self.put(format!("{prefix}.conv.weight"), g.dweight);
        self.put(format!("{prefix}.conv.bias"), g.dbias);
        g.dx
    }

    fn block(&mut self, prefix: &str, mut dout: Act<T>, cache: &BlockCache<T>) -> Act<T> {
        relu_backward(&mut dout, &cache.out);
        let da = self
            .unit(&format!("{prefix}.b"), dout.clone(), &cache.b, true)
            .expect("requested dx");
        let mut dx = self
            .unit(&format!("{prefix}.a"), da, &cache.a, true)
            .expect("requested dx");
        let dskip = match &cache.skip {
            Some(skip) => self
                .unit(&format!("{prefix}.skip"), dout, skip, true)
                .expect("requested dx"),
            None => dout,
        };
        dx.data.iter_mut().zip(&dskip.data).for_each(|(a, b)| *a += *b);
        dx
    }
}

/// Result of one training-mode forward and backward pass.
pub struct LossGrad<T> {
    pub loss: f64,
    /// Gradients keyed by trainable parameter name.
    pub grads: ParamMap<T>,
    pub probs: Vec<f64>,
    pub bn_stats: Vec<(String, BnBatchStats)>,
}

/// Mean cross-entropy over the batch and its exact gradient, with batch
/// norm in training mode. Labels are class indices (0 normal, 1 abnormal).
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>, labels: &[usize]) -> Result<LossGrad<T>> {
    if labels.len() != batch.n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.n
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::param(format!("label {bad} out of range")));
    }
    let out = forward(params, batch, Mode::Train)?;
    let (loss, dlogits) = softmax_cross_entropy(&out.logits, labels, NUM_CLASSES);
    let caches = out.trace.caches.expect("train mode keeps caches");

    let mut back = Back {
        params,
        grads: ParamMap::new(),
    };
    let dlogits: Vec<T> = dlogits.into_iter().map(T::lit).collect();
    let fc_w = params.get("fc.weight");
    let (dflat, dw, db) = dense_backward(&dlogits, &caches.flat, batch.n, &fc_w.data, NUM_CLASSES);
    back.put("fc.weight".into(), dw);
    back.put("fc.bias".into(), db);
    let (c, n, h, w) = caches.last_shape;
    let mut dx = unflatten(&dflat, c, n, h, w);
    for (prefix, cache) in caches.blocks.iter().rev() {
        dx = back.block(prefix, dx, cache);
    }
    let dstem = maxpool2_backward(&dx, &caches.pool);
    back.unit("stem", dstem, &caches.stem, false);

    Ok(LossGrad {
        loss,
        grads: back.grads,
        probs: out.probs,
        bn_stats: out.trace.bn_stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub p_abnormal: f64,
}

/// Class decision from a probability row; ties go to normal.
pub fn decide(probs: &[f64]) -> Prediction {
    let label = if probs[1] > probs[0] {
        Label::Abnormal
    } else {
        Label::Normal
    };
    Prediction {
        label,
        p_abnormal: probs[1],
    }
}

/// Inference-mode predictions; each one is independent of its batch mates.
pub fn predict_batch<T: Scalar>(params: &ModelParams<T>, matrices: &[&Array2<f64>]) -> Result<Vec<Prediction>> {
    let batch = Batch::from_matrices(matrices.iter().copied())?;
    let out = forward(params, &batch, Mode::Infer)?;
    Ok(out.probs.chunks(NUM_CLASSES).map(decide).collect())
}

pub fn predict_segment<T: Scalar>(params: &ModelParams<T>, f: &FeatureMatrix) -> Result<Prediction> {
    Ok(predict_batch(params, &[&f.values])?[0])
}
