//! Finite-difference gradient checks in f64 with central differences of
//! step 1e-3.

use pcg_core::model::layers::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax_cross_entropy, ConvGeom,
};
use pcg_core::model::{init_model, loss_and_grad, Act, Batch, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{max_abs_diff, rel_err, Check};

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

fn randu(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    numeric_grad_step(x, H, f)
}

pub fn numeric_grad_step(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> Check {
    Check::below(name, rel_err(analytic, numeric), TOL)
}

pub fn conv(
    label: &str,
    g: ConvGeom,
    c_in: usize,
    c_out: usize,
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = randu(&mut rng, c_in * n * h * w);
    let wt = randu(&mut rng, c_out * c_in * g.kernel * g.kernel);
    let b = randu(&mut rng, c_out);
    let (y, cache) = conv2d_forward(&Act::from_vec(c_in, n, h, w, x.clone()), &wt, &b, c_out, g);
    let r = randu(&mut rng, y.data.len());
    let dy = Act::from_vec(y.c, y.n, y.h, y.w, r.clone());
    let grads = conv2d_backward(&dy, &cache, &wt, true);
    let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
        let (y, _) = conv2d_forward(&Act::from_vec(c_in, n, h, w, x.to_vec()), wt, b, c_out, g);
        dot(&y.data, &r)
    };
    vec![
        check(
            &format!("{label} dx"),
            &grads.dx.unwrap().data,
            &numeric_grad(&x, |v| loss(v, &wt, &b)),
        ),
        check(
            &format!("{label} dweight"),
            &grads.dweight,
            &numeric_grad(&wt, |v| loss(&x, v, &b)),
        ),
        check(
            &format!("{label} dbias"),
            &grads.dbias,
            &numeric_grad(&b, |v| loss(&x, &wt, v)),
        ),
    ]
}

pub fn convs() -> Vec<Check> {
    let mut out = conv(
        "conv3x3",
        ConvGeom {
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        2,
        3,
        2,
        5,
        6,
        1,
    );
    out.extend(conv(
        "conv3x3/2",
        ConvGeom {
            kernel: 3,
            stride: 2,
            pad: 1,
        },
        3,
        2,
        2,
        7,
        5,
        2,
    ));
    out.extend(conv(
        "conv1x1/2",
        ConvGeom {
            kernel: 1,
            stride: 2,
            pad: 0,
        },
        3,
        4,
        2,
        5,
        4,
        3,
    ));
    out
}

pub fn batchnorm() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, n, h, w) = (3, 4, 2, 3);
    let x = randu(&mut rng, c * n * h * w);
    let gamma: Vec<f64> = randu(&mut rng, c).iter().map(|v| v + 1.5).collect();
    let beta = randu(&mut rng, c);
    let r = randu(&mut rng, x.len());
    let eps = 1e-5;
    let loss = |x: &[f64], g: &[f64], b: &[f64]| {
        let (y, _, _) = batchnorm_forward_train(&Act::from_vec(c, n, h, w, x.to_vec()), g, b, eps);
        dot(&y.data, &r)
    };
    let (_, cache, _) = batchnorm_forward_train(&Act::from_vec(c, n, h, w, x.clone()), &gamma, &beta, eps);
    let (dx, dg, db) = batchnorm_backward(&Act::from_vec(c, n, h, w, r.clone()), &cache, &gamma);
    vec![
        check("batchnorm dx", &dx.data, &numeric_grad(&x, |v| loss(v, &gamma, &beta))),
        check("batchnorm dgamma", &dg, &numeric_grad(&gamma, |v| loss(&x, v, &beta))),
        check("batchnorm dbeta", &db, &numeric_grad(&beta, |v| loss(&x, &gamma, v))),
    ]
}

pub fn relu() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Inputs kept away from the kink.
    let x: Vec<f64> = randu(&mut rng, 40)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    let r = randu(&mut rng, 40);
    let mut y = Act::from_vec(2, 2, 2, 5, x.clone());
    relu_forward(&mut y);
    let mut d = Act::from_vec(2, 2, 2, 5, r.clone());
    relu_backward(&mut d, &y);
    let num = numeric_grad(&x, |v| {
        let mut a = Act::from_vec(2, 2, 2, 5, v.to_vec());
        relu_forward(&mut a);
        dot(&a.data, &r)
    });
    vec![check("relu dx", &d.data, &num)]
}

pub fn maxpool() -> Vec<Check> {
    // Distinct values spaced wider than 2h, so no window changes its winner.
    let (c, n, h, w) = (2, 2, 5, 7);
    let len = c * n * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let x: Vec<f64> = order.iter().map(|&k| k as f64 * 0.01).collect();
    let (y, cache) = maxpool2_forward(&Act::from_vec(c, n, h, w, x.clone()));
    let r = randu(&mut rng, y.data.len());
    let dx = maxpool2_backward(&Act::from_vec(y.c, y.n, y.h, y.w, r.clone()), &cache);
    let num = numeric_grad(&x, |v| {
        dot(&maxpool2_forward(&Act::from_vec(c, n, h, w, v.to_vec())).0.data, &r)
    });
    vec![
        Check::holds("maxpool ceil-mode shape", (y.h, y.w) == (3, 4)),
        check("maxpool dx", &dx.data, &num),
    ]
}

pub fn residual_add() -> Vec<Check> {
    // y = conv(x) + x
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = ConvGeom {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    let (c, n, h, w) = (2, 2, 4, 4);
    let x = randu(&mut rng, c * n * h * w);
    let wt = randu(&mut rng, c * c * 9);
    let b = randu(&mut rng, c);
    let r = randu(&mut rng, x.len());
    let (_, cache) = conv2d_forward(&Act::from_vec(c, n, h, w, x.clone()), &wt, &b, c, g);
    let mut dx = conv2d_backward(&Act::from_vec(c, n, h, w, r.clone()), &cache, &wt, true)
        .dx
        .unwrap();
    dx.data.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
    let num = numeric_grad(&x, |v| {
        let (y, _) = conv2d_forward(&Act::from_vec(c, n, h, w, v.to_vec()), &wt, &b, c, g);
        y.data.iter().zip(v).zip(&r).map(|((y, x), r)| (y + x) * r).sum()
    });
    vec![check("residual add dx", &dx.data, &num)]
}

pub fn dense() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, f, out) = (3, 7, 2);
    let x = randu(&mut rng, n * f);
    let wt = randu(&mut rng, out * f);
    let b = randu(&mut rng, out);
    let r = randu(&mut rng, n * out);
    let (dx, dw, db) = dense_backward(&r, &x, n, &wt, out);
    let loss = |x: &[f64], wt: &[f64], b: &[f64]| dot(&dense_forward(x, n, wt, b, out), &r);
    vec![
        check("dense dx", &dx, &numeric_grad(&x, |v| loss(v, &wt, &b))),
        check("dense dweight", &dw, &numeric_grad(&wt, |v| loss(&x, v, &b))),
        check("dense dbias", &db, &numeric_grad(&b, |v| loss(&x, &wt, v))),
    ]
}

pub fn softmax_ce() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits: Vec<f64> = randu(&mut rng, 10).iter().map(|v| 3.0 * v).collect();
    let labels = [0, 1, 1, 0, 1];
    let (_, grad) = softmax_cross_entropy(&logits, &labels, 2);
    let num = numeric_grad(&logits, |v| softmax_cross_entropy(v, &labels, 2).0);
    vec![check("softmax cross-entropy dlogits", &grad, &num)]
}

pub fn layers() -> Vec<Check> {
    let mut out = convs();
    out.extend(batchnorm());
    out.extend(relu());
    out.extend(maxpool());
    out.extend(residual_add());
    out.extend(dense());
    out.extend(softmax_ce());
    out
}

/// Width-reduced network on 13-row inputs, a batch of four and mixed
/// labels. With `kink_free`, every batch-norm channel gets gain 0.3 and
/// offset ±1.5, so each ReLU channel is wholly on or wholly off and a step
/// of 1e-3 never crosses a kink; otherwise the affine parameters are
/// randomly perturbed around their initial values.
pub fn tiny_model(kink_free: bool) -> (ModelParams<f64>, Batch<f64>, Vec<usize>) {
    let cfg = ModelConfig::reduced(13, 12, 3, [2, 3, 2, 3]).unwrap();
    let mut params = init_model::<f64>(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let names: Vec<String> = params.trainable_names().to_vec();
    for name in names.iter().filter(|n| n.contains(".bn.")) {
        let gain = name.ends_with("bn.weight");
        for v in params.get_mut(name).unwrap().data.iter_mut() {
            *v = match (kink_free, gain) {
                (true, true) => 0.3,
                (true, false) => {
                    if rng.random_bool(0.7) {
                        1.5
                    } else {
                        -1.5
                    }
                }
                (false, _) => *v + rng.random_range(-0.3..0.3),
            };
        }
    }
    let n = 4;
    let data = randu(&mut rng, n * cfg.input_rows * cfg.input_cols);
    let batch = Batch {
        n,
        rows: cfg.input_rows,
        cols: cfg.input_cols,
        data,
    };
    (params, batch, vec![0, 1, 1, 0])
}

fn model_checks(kink_free: bool, h: f64, tol: f64) -> Vec<Check> {
    let (params, batch, labels) = tiny_model(kink_free);
    let lg = loss_and_grad(&params, &batch, &labels).unwrap();
    let mut out = vec![Check::holds(
        "every trainable tensor has a gradient",
        lg.grads.len() == params.trainable_names().len(),
    )];
    for name in params.trainable_names() {
        let base = params.get(name).data.clone();
        let num = numeric_grad_step(&base, h, |v| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data.copy_from_slice(v);
            loss_and_grad(&p, &batch, &labels).unwrap().loss
        });
        let analytic = &lg.grads[name].data;
        let label = format!("model {name}, step {h:e}");
        if analytic.iter().all(|g| g.abs() < 1e-12) {
            // Biases feeding batch norm: only rounding noise is left to compare.
            out.push(Check::below(label, max_abs_diff(analytic, &num), 1e-7));
        } else {
            out.push(Check::below(label, rel_err(analytic, &num), tol));
        }
    }
    out
}

/// One check per trainable tensor at the kink-free point, step 1e-3.
pub fn whole_model() -> Vec<Check> {
    model_checks(true, H, TOL)
}

/// Generic point with active kinks: a small step keeps crossings rare.
pub fn whole_model_generic_point() -> Vec<Check> {
    model_checks(false, 1e-6, 1e-5)
}
