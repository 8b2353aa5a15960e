//! Test-only oracles. Nothing here calls into the kernels under test except
//! through the forward/backward entry points being checked.
#![allow(dead_code)]

use chipcut_core::tensor::ops::{self, BnMode, RunningStats};
use chipcut_core::tensor::{Shape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

pub fn rng(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut Pcg32, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values bounded away from zero, so ReLU kinks stay outside the
/// finite-difference stencil.
pub fn random_away_from_zero(rng: &mut Pcg32, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Random shape bounded by `(2, 4, 6, 6)` with spatial dims at least `min_hw`.
pub fn random_shape(rng: &mut Pcg32, min_hw: usize) -> Shape {
    Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(min_hw..=6),
        rng.random_range(min_hw..=6),
    )
}

/// Direct six-loop cross-correlation with zero padding.
pub fn brute_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Shape, Vec<f64>) {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let shape = Shape::new(xs.n, ws.n, oh, ow);
    let mut out = Vec::with_capacity(shape.numel());
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (shape, out)
}

/// Triple-loop dense layer: `out[s][j] = sum_i w[j][i] x[s][i] + b[j]`.
pub fn brute_linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, f_in, f_out) = (x.shape().n, x.shape().c, w.shape().n);
    let mut out = vec![0.0; n * f_out];
    for s in 0..n {
        for j in 0..f_out {
            let mut acc = 0.0;
            for i in 0..f_in {
                acc += w.data()[j * f_in + i] * x.data()[s * f_in + i];
            }
            out[s * f_out + j] = acc + b.data()[j];
        }
    }
    out
}

/// Largest elementwise `|a - b| / max(|b|, 1)`.
pub fn max_rel_err(actual: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Norm-wise relative error `||a - n|| / max(||a||, ||n||)`.
pub fn norm_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-14 {
        diff
    } else {
        diff / denom
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `sum(out * weights)`: a scalar probe whose gradient w.r.t. `out` is `weights`.
pub fn probe(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Worst norm-wise relative error over every input of one randomized case.
pub type GradCase = fn(&mut Pcg32) -> f64;

pub fn grad_linear(r: &mut Pcg32) -> f64 {
    let n = r.random_range(1..=2);
    let f_in = r.random_range(1..=6);
    let f_out = r.random_range(1..=6);
    let x = random_tensor(r, Shape::new(n, f_in, 1, 1));
    let w = random_tensor(r, Shape::new(f_out, f_in, 1, 1));
    let b = random_tensor(r, Shape::vector(f_out));
    let probe_w = random_tensor(r, Shape::new(n, f_out, 1, 1));
    let g = ops::linear_backward(&x, &w, &probe_w).unwrap();
    let fx = numeric_grad(&x, |x| {
        probe(&ops::linear_forward(x, &w, &b).unwrap(), &probe_w)
    });
    let fw = numeric_grad(&w, |w| {
        probe(&ops::linear_forward(&x, w, &b).unwrap(), &probe_w)
    });
    let fb = numeric_grad(&b, |b| {
        probe(&ops::linear_forward(&x, &w, b).unwrap(), &probe_w)
    });
    norm_rel_err(g.dx.data(), &fx)
        .max(norm_rel_err(g.dw.data(), &fw))
        .max(norm_rel_err(g.db.data(), &fb))
}

pub fn grad_relu(r: &mut Pcg32) -> f64 {
    let shape = random_shape(r, 1);
    let x = random_away_from_zero(r, shape);
    let probe_w = random_tensor(r, shape);
    let dx = ops::relu_backward(&x, &probe_w);
    let fx = numeric_grad(&x, |x| probe(&ops::relu_forward(x), &probe_w));
    norm_rel_err(dx.data(), &fx)
}

pub fn grad_conv(r: &mut Pcg32) -> f64 {
    let k = if r.random_bool(0.5) { 1 } else { 3 };
    let stride = r.random_range(1..=2);
    let pad = if k == 3 { r.random_range(0..=1) } else { 0 };
    let mut shape = random_shape(r, 3);
    let c_out = r.random_range(1..=4);
    shape.h = shape.h.max(k);
    shape.w = shape.w.max(k);
    let x = random_tensor(r, shape);
    let w = random_tensor(r, Shape::new(c_out, shape.c, k, k));
    let b = random_tensor(r, Shape::vector(c_out));
    let y = ops::conv2d_forward(&x, &w, &b, stride, pad).unwrap();
    let probe_w = random_tensor(r, y.shape());
    let g = ops::conv2d_backward(&x, &w, stride, pad, &probe_w).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        probe(
            &ops::conv2d_forward(x, w, b, stride, pad).unwrap(),
            &probe_w,
        )
    };
    let fx = numeric_grad(&x, |x| f(x, &w, &b));
    let fw = numeric_grad(&w, |w| f(&x, w, &b));
    let fb = numeric_grad(&b, |b| f(&x, &w, b));
    norm_rel_err(g.dx.data(), &fx)
        .max(norm_rel_err(g.dw.data(), &fw))
        .max(norm_rel_err(g.db.data(), &fb))
}

fn grad_batchnorm_mode(r: &mut Pcg32, mode: BnMode) -> f64 {
    let shape = random_shape(r, 2);
    let c = shape.c;
    let x = random_tensor(r, shape);
    let gamma = random_tensor(r, Shape::vector(c));
    let beta = random_tensor(r, Shape::vector(c));
    let stats = RunningStats {
        mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
        var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
    };
    let probe_w = random_tensor(r, shape);
    let run = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let mut s = stats.clone();
        ops::batchnorm_forward(x, g, b, &mut s, mode).unwrap()
    };
    let (_, cache) = run(&x, &gamma, &beta);
    let g = ops::batchnorm_backward(&cache, &gamma, &probe_w).unwrap();
    let fx = numeric_grad(&x, |x| probe(&run(x, &gamma, &beta).0, &probe_w));
    let fg = numeric_grad(&gamma, |gm| probe(&run(&x, gm, &beta).0, &probe_w));
    let fb = numeric_grad(&beta, |bt| probe(&run(&x, &gamma, bt).0, &probe_w));
    norm_rel_err(g.dx.data(), &fx)
        .max(norm_rel_err(g.dgamma.data(), &fg))
        .max(norm_rel_err(g.dbeta.data(), &fb))
}

pub fn grad_batchnorm_train(r: &mut Pcg32) -> f64 {
    grad_batchnorm_mode(r, BnMode::Train)
}

pub fn grad_batchnorm_eval(r: &mut Pcg32) -> f64 {
    grad_batchnorm_mode(r, BnMode::Eval)
}

/// Residual add passes the upstream gradient to both operands.
pub fn grad_residual_add(r: &mut Pcg32) -> f64 {
    let shape = random_shape(r, 1);
    let a = random_tensor(r, shape);
    let b = random_tensor(r, shape);
    let probe_w = random_tensor(r, shape);
    let fa = numeric_grad(&a, |a| probe(&ops::residual_add(a, &b).unwrap(), &probe_w));
    let fb = numeric_grad(&b, |b| probe(&ops::residual_add(&a, b).unwrap(), &probe_w));
    norm_rel_err(probe_w.data(), &fa).max(norm_rel_err(probe_w.data(), &fb))
}

pub fn grad_global_avg_pool(r: &mut Pcg32) -> f64 {
    let shape = random_shape(r, 1);
    let x = random_tensor(r, shape);
    let probe_w = random_tensor(r, Shape::new(shape.n, shape.c, 1, 1));
    let dx = ops::global_avg_pool_backward(shape, &probe_w);
    let fx = numeric_grad(&x, |x| probe(&ops::global_avg_pool(x), &probe_w));
    norm_rel_err(dx.data(), &fx)
}

pub fn grad_pool_and_classify(r: &mut Pcg32) -> f64 {
    let shape = random_shape(r, 1);
    let classes = r.random_range(2..=5);
    let x = random_tensor(r, shape);
    let w = random_tensor(r, Shape::new(classes, shape.c, 1, 1));
    let b = random_tensor(r, Shape::vector(classes));
    let probe_w = random_tensor(r, Shape::new(shape.n, classes, 1, 1));
    let pooled = ops::global_avg_pool(&x);
    let lg = ops::linear_backward(&pooled, &w, &probe_w).unwrap();
    let dx = ops::global_avg_pool_backward(shape, &lg.dx);
    let f = |x: &Tensor<f64>, w: &Tensor<f64>| {
        probe(&ops::pool_and_classify(x, w, &b).unwrap(), &probe_w)
    };
    let fx = numeric_grad(&x, |x| f(x, &w));
    let fw = numeric_grad(&w, |w| f(&x, w));
    norm_rel_err(dx.data(), &fx).max(norm_rel_err(lg.dw.data(), &fw))
}

pub fn grad_cross_entropy(r: &mut Pcg32) -> f64 {
    let n = r.random_range(1..=4);
    let classes = r.random_range(2..=6);
    let logits = Tensor::from_fn(Shape::new(n, classes, 1, 1), |_| r.random_range(-3.0..3.0));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let (_, grad) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    let fx = numeric_grad(&logits, |l| {
        ops::softmax_cross_entropy(l, &labels).unwrap().0
    });
    norm_rel_err(grad.data(), &fx)
}

/// Every differentiable op, by name.
pub const GRAD_CASES: &[(&str, GradCase)] = &[
    ("linear", grad_linear),
    ("relu", grad_relu),
    ("conv2d", grad_conv),
    ("batchnorm_train", grad_batchnorm_train),
    ("batchnorm_eval", grad_batchnorm_eval),
    ("residual_add", grad_residual_add),
    ("global_avg_pool", grad_global_avg_pool),
    ("pool_and_classify", grad_pool_and_classify),
    ("softmax_cross_entropy", grad_cross_entropy),
];

/// Random conv configuration with `k` in {1, 3} checked against [`brute_conv`].
pub fn conv_oracle_case(r: &mut Pcg32) -> f64 {
    let k = if r.random_bool(0.5) { 1 } else { 3 };
    let stride = r.random_range(1..=2);
    let pad = r.random_range(0..=k / 2 + 1);
    let n = r.random_range(1..=2);
    let c_in = r.random_range(1..=4);
    let c_out = r.random_range(1..=5);
    let h = r.random_range(k.max(1)..=7);
    let w = r.random_range(k.max(1)..=7);
    let x = random_tensor(r, Shape::new(n, c_in, h, w));
    let wt = random_tensor(r, Shape::new(c_out, c_in, k, k));
    let b = random_tensor(r, Shape::vector(c_out));
    let got = ops::conv2d_forward(&x, &wt, &b, stride, pad).unwrap();
    let (shape, want) = brute_conv(&x, &wt, &b, stride, pad);
    assert_eq!(got.shape(), shape);
    max_rel_err(got.data(), &want)
}
