//! Layer primitives with explicit backward passes. All activations use the
//! channel-major [`Act`] layout.

use super::tensor::{gemm, Act, Layout, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dim(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    geom: ConvGeom,
}

fn im2col<T: Scalar>(x: &Act<T>, g: ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let k = g.kernel;
    let ncols = x.n * ho * wo;
    let mut cols = vec![T::zero(); x.c * k * k * ncols];
    for c in 0..x.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = valid_cols(g, kj, x.w, wo);
                if ox_lo == ox_hi {
                    continue;
                }
                for n in 0..x.n {
                    let src = &x.data[(c * x.n + n) * x.plane()..(c * x.n + n + 1) * x.plane()];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let base = (n * ho + oy) * wo;
                        let src_row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let ix0 = ox_lo * g.stride + kj - g.pad;
                        let out = &mut dst[base + ox_lo..base + ox_hi];
                        if g.stride == 1 {
                            out.copy_from_slice(&src_row[ix0..ix0 + out.len()]);
                        } else {
                            for (o, v) in out.iter_mut().zip(src_row[ix0..].iter().step_by(g.stride)) {
                                *o = *v;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Output-column range `[lo, hi)` whose input column `ox·s + kj − pad`
/// lies inside `0..w`.
fn valid_cols(g: ConvGeom, kj: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi = (w + g.pad).saturating_sub(kj).div_ceil(g.stride).min(wo);
    (lo, hi.max(lo))
}

fn col2im<T: Scalar>(
    dcols: &[T],
    (c_in, n_b, h, w): (usize, usize, usize, usize),
    g: ConvGeom,
    ho: usize,
    wo: usize,
) -> Act<T> {
    let k = g.kernel;
    let ncols = n_b * ho * wo;
    let mut dx = Act::zeros(c_in, n_b, h, w);
    let plane = h * w;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &dcols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = valid_cols(g, kj, w, wo);
                if ox_lo == ox_hi {
                    continue;
                }
                for n in 0..n_b {
                    let dst = &mut dx.data[(c * n_b + n) * plane..(c * n_b + n + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (n * ho + oy) * wo;
                        let ix0 = ox_lo * g.stride + kj - g.pad;
                        let dst_row = &mut dst[iy as usize * w + ix0..(iy as usize + 1) * w];
                        let vals = &src[base + ox_lo..base + ox_hi];
                        for (d, &v) in dst_row.iter_mut().step_by(g.stride).zip(vals) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Cross-correlation with weights `out×in×k×k` and per-output bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Act<T>,
    weight: &[T],
    bias: &[T],
    out_channels: usize,
    g: ConvGeom,
) -> (Act<T>, ConvCache<T>) {
    let (ho, wo) = (g.out_dim(x.h), g.out_dim(x.w));
    let kdim = x.c * g.kernel * g.kernel;
    assert_eq!(weight.len(), out_channels * kdim, "conv weight shape");
    assert_eq!(bias.len(), out_channels, "conv bias shape");
    let cols = im2col(x, g, ho, wo);
    let ncols = x.n * ho * wo;
    let mut y = Act::zeros(out_channels, x.n, ho, wo);
    gemm(
        out_channels,
        kdim,
        ncols,
        weight,
        Layout::row_major(kdim),
        &cols,
        Layout::row_major(ncols),
        T::zero(),
        &mut y.data,
        Layout::row_major(ncols),
    );
    for (o, &b) in bias.iter().enumerate() {
        y.data[o * ncols..(o + 1) * ncols].iter_mut().for_each(|v| *v += b);
    }
    (
        y,
        ConvCache {
            cols,
            in_shape: (x.c, x.n, x.h, x.w),
            geom: g,
        },
    )
}

pub struct ConvGrads<T> {
    pub dx: Option<Act<T>>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(dy: &Act<T>, cache: &ConvCache<T>, weight: &[T], need_dx: bool) -> ConvGrads<T> {
    let g = cache.geom;
    let (c_in, _, _, _) = cache.in_shape;
    let kdim = c_in * g.kernel * g.kernel;
    let out_channels = dy.c;
    let ncols = dy.per_channel();

    let mut dweight = vec![T::zero(); out_channels * kdim];
    gemm(
        out_channels,
        ncols,
        kdim,
        &dy.data,
        Layout::row_major(ncols),
        &cache.cols,
        Layout::transposed(ncols),
        T::zero(),
        &mut dweight,
        Layout::row_major(kdim),
    );
    let dbias = (0..out_channels)
        .map(|o| {
            let d = &dy.data[o * ncols..(o + 1) * ncols];
            T::lit(lane_sum(d, d, |v, _| v))
        })
        .collect();
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); kdim * ncols];
        gemm(
            kdim,
            out_channels,
            ncols,
            weight,
            Layout::transposed(kdim),
            &dy.data,
            Layout::row_major(ncols),
            T::zero(),
            &mut dcols,
            Layout::row_major(ncols),
        );
        col2im(&dcols, cache.in_shape, g, dy.h, dy.w)
    });
    ConvGrads { dx, dweight, dbias }
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
}

/// Per-channel batch statistics observed in a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var_unbiased: Vec<f64>,
}

/// `Σ f(a_i, b_i)` in f64 with independent lanes, so long reductions are
/// not bound by the latency of one add chain.
#[inline]
fn lane_sum<T: Scalar>(a: &[T], b: &[T], f: impl Fn(f64, f64) -> f64) -> f64 {
    const L: usize = 8;
    let mut acc = [0.0f64; L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..L {
            acc[l] += f(x[l].as_f64(), y[l].as_f64());
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| f(x.as_f64(), y.as_f64())).sum();
    acc.iter().sum::<f64>() + tail
}

/// Training-mode batch normalization over `N·H·W` per channel.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Act<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Act<T>, BnCache<T>, BnBatchStats) {
    let m = x.per_channel();
    let mut y = x.clone();
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = Vec::with_capacity(x.c);
    let mut stats = BnBatchStats {
        mean: Vec::with_capacity(x.c),
        var_unbiased: Vec::with_capacity(x.c),
    };
    for c in 0..x.c {
        let row = &x.data[c * m..(c + 1) * m];
        let mean = lane_sum(row, row, |v, _| v) / m as f64;
        let var = lane_sum(row, row, |v, _| (v - mean) * (v - mean)) / m as f64;
        let istd = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma[c], beta[c]);
        let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
        let out = y.data[c * m..(c + 1) * m].iter_mut();
        for ((yv, xh), &xv) in out.zip(&mut xhat[c * m..(c + 1) * m]).zip(row) {
            *xh = (xv - mean_t) * istd_t;
            *yv = g * *xh + b;
        }
        inv_std.push(istd);
        stats.mean.push(mean);
        stats
            .var_unbiased
            .push(if m > 1 { var * m as f64 / (m - 1) as f64 } else { var });
    }
    (y, BnCache { xhat, inv_std }, stats)
}

pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Act<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Act<T> {
    let m = x.per_channel();
    let mut y = x.clone();
    for c in 0..x.c {
        let scale = gamma[c].as_f64() / (running_var[c].as_f64() + eps).sqrt();
        let shift = beta[c].as_f64() - running_mean[c].as_f64() * scale;
        let (scale, shift) = (T::lit(scale), T::lit(shift));
        y.data[c * m..(c + 1) * m]
            .iter_mut()
            .for_each(|v| *v = *v * scale + shift);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(dy: &Act<T>, cache: &BnCache<T>, gamma: &[T]) -> (Act<T>, Vec<T>, Vec<T>) {
    let m = dy.per_channel();
    let mut dx = dy.clone();
    let mut dgamma = Vec::with_capacity(dy.c);
    let mut dbeta = Vec::with_capacity(dy.c);
    for c in 0..dy.c {
        let range = c * m..(c + 1) * m;
        let (d, xh) = (&dy.data[range.clone()], &cache.xhat[range.clone()]);
        let sum_dy = lane_sum(d, d, |v, _| v);
        let sum_dy_xhat = lane_sum(d, xh, |v, x| v * x);
        let k = gamma[c].as_f64() * cache.inv_std[c];
        // dx = k·(dy − mean(dy) − x̂·mean(dy·x̂))
        let (a, b) = (T::lit(k), T::lit(-k * sum_dy / m as f64));
        let s = T::lit(-k * sum_dy_xhat / m as f64);
        for (d, &xh) in dx.data[range].iter_mut().zip(&cache.xhat[c * m..(c + 1) * m]) {
            *d = a * *d + b + s * xh;
        }
        dgamma.push(T::lit(sum_dy_xhat));
        dbeta.push(T::lit(sum_dy));
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward<T: Scalar>(x: &mut Act<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gates `dy` by the ReLU output `y`.
pub fn relu_backward<T: Scalar>(dy: &mut Act<T>, y: &Act<T>) {
    for (d, &o) in dy.data.iter_mut().zip(&y.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Winning index within each input plane.
    argmax: Vec<u32>,
    in_shape: (usize, usize, usize, usize),
}

/// 2×2 max-pooling with stride 2; odd edges form partial windows (ceil mode).
pub fn maxpool2_forward<T: Scalar>(x: &Act<T>) -> (Act<T>, PoolCache) {
    let (ho, wo) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut y = Act::zeros(x.c, x.n, ho, wo);
    let mut argmax = vec![0u32; y.data.len()];
    let plane = x.plane();
    for cn in 0..x.c * x.n {
        let src = &x.data[cn * plane..(cn + 1) * plane];
        for oy in 0..ho {
            let r0 = 2 * oy * x.w;
            let r1 = if 2 * oy + 1 < x.h { r0 + x.w } else { r0 };
            let o = (cn * ho + oy) * wo;
            for ox in 0..wo {
                let c0 = 2 * ox;
                let c1 = if c0 + 1 < x.w { c0 + 1 } else { c0 };
                let mut best = r0 + c0;
                for idx in [r0 + c1, r1 + c0, r1 + c1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                y.data[o + ox] = src[best];
                argmax[o + ox] = best as u32;
            }
        }
    }
    (
        y,
        PoolCache {
            argmax,
            in_shape: (x.c, x.n, x.h, x.w),
        },
    )
}

pub fn maxpool2_backward<T: Scalar>(dy: &Act<T>, cache: &PoolCache) -> Act<T> {
    let (c, n, h, w) = cache.in_shape;
    let mut dx = Act::zeros(c, n, h, w);
    let out_plane = dy.plane();
    for (cn, (dys, args)) in dy
        .data
        .chunks(out_plane)
        .zip(cache.argmax.chunks(out_plane))
        .enumerate()
    {
        let dst = &mut dx.data[cn * h * w..(cn + 1) * h * w];
        for (d, &src) in dys.iter().zip(args) {
            dst[src as usize] += *d;
        }
    }
    dx
}

/// Per-sample flattening in `(c, y, x)` order into an `N×F` row-major matrix.
pub fn flatten<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let f = x.c * x.plane();
    let mut out = vec![T::zero(); x.n * f];
    for c in 0..x.c {
        for n in 0..x.n {
            let src = &x.data[(c * x.n + n) * x.plane()..(c * x.n + n + 1) * x.plane()];
            out[n * f + c * x.plane()..n * f + (c + 1) * x.plane()].copy_from_slice(src);
        }
    }
    out
}

pub fn unflatten<T: Scalar>(flat: &[T], c: usize, n: usize, h: usize, w: usize) -> Act<T> {
    let plane = h * w;
    let f = c * plane;
    let mut x = Act::zeros(c, n, h, w);
    for ci in 0..c {
        for ni in 0..n {
            x.data[(ci * n + ni) * plane..(ci * n + ni + 1) * plane]
                .copy_from_slice(&flat[ni * f + ci * plane..ni * f + (ci + 1) * plane]);
        }
    }
    x
}

/// `y = x·Wᵀ + b` for `x: N×F`, `W: O×F`.
pub fn dense_forward<T: Scalar>(x: &[T], n: usize, weight: &[T], bias: &[T], out: usize) -> Vec<T> {
    let f = weight.len() / out;
    let mut y = vec![T::zero(); n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(
        n,
        f,
        out,
        x,
        Layout::row_major(f),
        weight,
        Layout::transposed(f),
        T::one(),
        &mut y,
        Layout::row_major(out),
    );
    y
}

/// Returns `(dx, dweight, dbias)`.
pub fn dense_backward<T: Scalar>(dy: &[T], x: &[T], n: usize, weight: &[T], out: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let f = weight.len() / out;
    let mut dweight = vec![T::zero(); out * f];
    gemm(
        out,
        n,
        f,
        dy,
        Layout::transposed(out),
        x,
        Layout::row_major(f),
        T::zero(),
        &mut dweight,
        Layout::row_major(f),
    );
    let mut dx = vec![T::zero(); n * f];
    gemm(
        n,
        out,
        f,
        dy,
        Layout::row_major(out),
        weight,
        Layout::row_major(f),
        T::zero(),
        &mut dx,
        Layout::row_major(f),
    );
    let dbias = (0..out).map(|o| (0..n).map(|i| dy[i * out + o]).sum()).collect();
    (dx, dweight, dbias)
}

/// Row-wise softmax of an `N×K` logit matrix, computed in `f64`.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let probs = softmax(logits, k);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        loss -= probs[i * k + label].max(f64::MIN_POSITIVE).ln();
        grad[i * k + label] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    (loss / n as f64, grad)
}
