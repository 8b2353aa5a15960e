//! Forward and backward kernels.
//!
//! Vectors (biases, BatchNorm affine terms) are stored as `(len, 1, 1, 1)`
//! tensors; a linear weight is `(f_out, f_in, 1, 1)` and a convolution
//! weight is `(c_out, c_in, k, k)`.

use super::{Scalar, Shape, Tensor};
use crate::error::{shape_err, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Kernel sizes the engine supports.
pub const KERNEL_SIZES: [usize; 2] = [1, 3];

fn check_vector<T: Scalar>(what: &str, t: &Tensor<T>, len: usize) -> Result<()> {
    if t.shape() != Shape::vector(len) {
        return shape_err(format!(
            "{what} must have shape {}, got {}",
            Shape::vector(len),
            t.shape()
        ));
    }
    Ok(())
}

fn add_bias_rows<T: Scalar>(out: &mut [T], bias: &[T], row_len: usize) {
    for (row, &b) in out.chunks_exact_mut(row_len).zip(bias) {
        row.iter_mut().for_each(|v| *v = *v + b);
    }
}

// ---------------------------------------------------------------------------
// linear

/// `out[s, j] = sum_i w[j, i] * x[s, i] + b[j]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.h != 1 || xs.w != 1 {
        return shape_err(format!("linear input must be (n, f, 1, 1), got {xs}"));
    }
    if ws.h != 1 || ws.w != 1 || ws.c != xs.c {
        return shape_err(format!(
            "linear weight {ws} does not accept {} input features",
            xs.c
        ));
    }
    let (n, f_in, f_out) = (xs.n, xs.c, ws.n);
    check_vector("linear bias", b, f_out)?;
    let mut out = vec![T::zero(); n * f_out];
    T::gemm(
        n,
        f_in,
        f_out,
        x.data(),
        (f_in as isize, 1),
        w.data(),
        (1, f_in as isize),
        T::zero(),
        &mut out,
        (f_out as isize, 1),
    );
    for row in out.chunks_exact_mut(f_out) {
        for (v, &bj) in row.iter_mut().zip(b.data()) {
            *v = *v + bj;
        }
    }
    Tensor::new(Shape::new(n, f_out, 1, 1), out)
}

pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, f_in, f_out) = (x.shape().n, x.shape().c, w.shape().n);
    if dout.shape() != Shape::new(n, f_out, 1, 1) {
        return shape_err(format!(
            "linear upstream gradient has shape {}",
            dout.shape()
        ));
    }
    let mut dx = Tensor::zeros(x.shape());
    T::gemm(
        n,
        f_out,
        f_in,
        dout.data(),
        (f_out as isize, 1),
        w.data(),
        (f_in as isize, 1),
        T::zero(),
        dx.data_mut(),
        (f_in as isize, 1),
    );
    let mut dw = Tensor::zeros(w.shape());
    T::gemm(
        f_out,
        n,
        f_in,
        dout.data(),
        (1, f_out as isize),
        x.data(),
        (f_in as isize, 1),
        T::zero(),
        dw.data_mut(),
        (f_in as isize, 1),
    );
    let mut db = Tensor::zeros(Shape::vector(f_out));
    for row in dout.data().chunks_exact(f_out) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok(LinearGrads { dx, dw, db })
}

// ---------------------------------------------------------------------------
// relu

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

// ---------------------------------------------------------------------------
// conv2d

/// Output spatial size of a convolution, or `None` when the window does not fit.
pub fn conv_output_hw(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
        return None;
    }
    Some((
        (h + 2 * pad - k) / stride + 1,
        (w + 2 * pad - k) / stride + 1,
    ))
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn check<T: Scalar>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let xs = x.shape();
        let ws = weight.shape();
        if ws.h != ws.w || !KERNEL_SIZES.contains(&ws.h) {
            return Err(Error::Config(format!(
                "conv kernel must be 1x1 or 3x3, weight has shape {ws}"
            )));
        }
        if ws.c != xs.c {
            return shape_err(format!(
                "conv weight {ws} expects {} input channels, input is {xs}",
                ws.c
            ));
        }
        let (oh, ow) = conv_output_hw(xs.h, xs.w, ws.h, stride, pad).ok_or_else(|| {
            Error::Config(format!(
                "conv k={} stride={stride} pad={pad} does not fit a {}x{} input",
                ws.h, xs.h, xs.w
            ))
        })?;
        Ok(Self {
            c_in: xs.c,
            c_out: ws.n,
            k: ws.h,
            h: xs.h,
            w: xs.w,
            oh,
            ow,
            stride,
            pad,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 / stride 1 / pad 0: the input sample already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for output coordinate `o` and kernel tap `t`.
    fn source(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let p = self.out_pixels();
        for ci in 0..self.c_in {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = &mut cols[((ci * self.k + ki) * self.k + kj) * p..][..p];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, ki, self.h) {
                            None => dst.fill(T::zero()),
                            Some(iy) => {
                                let src = &sample[(ci * self.h + iy) * self.w..][..self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match self.source(ox, kj, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let p = self.out_pixels();
        for ci in 0..self.c_in {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = &cols[((ci * self.k + ki) * self.k + kj) * p..][..p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ki, self.h) else {
                            continue;
                        };
                        let dst = &mut sample[(ci * self.h + iy) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = self.source(ox, kj, self.w) {
                                dst[ix] = dst[ix] + row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation (no kernel flip).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = ConvDims::check(x, weight, stride, pad)?;
    check_vector("conv bias", bias, d.c_out)?;
    let n = x.shape().n;
    let (kk, p) = (d.patch_len(), d.out_pixels());
    let out_shape = Shape::new(n, d.c_out, d.oh, d.ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    let mut cols = if d.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    for s in 0..n {
        let col_src: &[T] = if d.is_pointwise() {
            x.sample(s)
        } else {
            d.im2col(x.sample(s), &mut cols);
            &cols
        };
        let dst = &mut out[s * d.c_out * p..(s + 1) * d.c_out * p];
        T::gemm(
            d.c_out,
            kk,
            p,
            weight.data(),
            (kk as isize, 1),
            col_src,
            (p as isize, 1),
            T::zero(),
            dst,
            (p as isize, 1),
        );
        add_bias_rows(dst, bias.data(), p);
    }
    Tensor::new(out_shape, out)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = ConvDims::check(x, weight, stride, pad)?;
    let n = x.shape().n;
    if dout.shape() != Shape::new(n, d.c_out, d.oh, d.ow) {
        return shape_err(format!("conv upstream gradient has shape {}", dout.shape()));
    }
    let (kk, p) = (d.patch_len(), d.out_pixels());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(Shape::vector(d.c_out));
    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = vec![T::zero(); kk * p];
    let sample_len = x.shape().sample_len();
    for s in 0..n {
        let g = dout.sample(s);
        for (acc, row) in db.data_mut().iter_mut().zip(g.chunks_exact(p)) {
            *acc = row.iter().fold(*acc, |a, &v| a + v);
        }
        let col_src: &[T] = if d.is_pointwise() {
            x.sample(s)
        } else {
            d.im2col(x.sample(s), &mut cols);
            &cols
        };
        // dW += dout_s * cols^T
        T::gemm(
            d.c_out,
            p,
            kk,
            g,
            (p as isize, 1),
            col_src,
            (1, p as isize),
            T::one(),
            dw.data_mut(),
            (kk as isize, 1),
        );
        let dx_s = &mut dx.data_mut()[s * sample_len..(s + 1) * sample_len];
        if d.is_pointwise() {
            T::gemm(
                kk,
                d.c_out,
                p,
                weight.data(),
                (1, kk as isize),
                g,
                (p as isize, 1),
                T::zero(),
                dx_s,
                (p as isize, 1),
            );
        } else {
            T::gemm(
                kk,
                d.c_out,
                p,
                weight.data(),
                (1, kk as isize),
                g,
                (p as isize, 1),
                T::zero(),
                &mut dcols,
                (p as isize, 1),
            );
            d.col2im_add(&dcols, dx_s);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

// ---------------------------------------------------------------------------
// batch norm

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Values the backward pass needs from a BatchNorm forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
}

fn channel_slices<T>(data: &[T], shape: Shape, c: usize) -> impl Iterator<Item = &[T]> {
    let hw = shape.h * shape.w;
    (0..shape.n).map(move |s| &data[(s * shape.c + c) * hw..][..hw])
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let shape = x.shape();
    let hw = shape.h * shape.w;
    let mut xhat = Tensor::zeros(shape);
    let mut out = Tensor::zeros(shape);
    for s in 0..shape.n {
        for c in 0..shape.c {
            let base = (s * shape.c + c) * hw;
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for i in base..base + hw {
                let v = (x.data()[i] - mean[c]) * inv_std[c];
                xhat.data_mut()[i] = v;
                out.data_mut()[i] = g * v + b;
            }
        }
    }
    (out, xhat)
}

fn check_bn<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
) -> Result<()> {
    let c = x.shape().c;
    check_vector("batchnorm gamma", gamma, c)?;
    check_vector("batchnorm beta", beta, c)?;
    if stats.mean.len() != c || stats.var.len() != c {
        return shape_err(format!(
            "batchnorm running stats track {} channels, input has {c}",
            stats.mean.len()
        ));
    }
    Ok(())
}

/// Eval-mode BatchNorm: `(x - running_mean) / sqrt(running_var + eps) * gamma + beta`.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    check_bn(x, gamma, beta, stats)?;
    let eps = T::of(BN_EPS);
    let inv_std: Vec<T> = stats
        .var
        .iter()
        .map(|&v| (v + eps).sqrt().recip())
        .collect();
    let (out, xhat) = normalize(x, gamma, beta, &stats.mean, &inv_std);
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            mode: BnMode::Eval,
        },
    ))
}

/// Train mode normalizes with batch statistics and folds them into `stats`
/// with momentum [`BN_MOMENTUM`]; eval mode reads `stats` only.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    if mode == BnMode::Eval {
        return batchnorm_eval(x, gamma, beta, stats);
    }
    check_bn(x, gamma, beta, stats)?;
    let shape = x.shape();
    let count = shape.n * shape.h * shape.w;
    let m = T::of(count as f64);
    let eps = T::of(BN_EPS);
    let momentum = T::of(BN_MOMENTUM);
    let mut mean = vec![T::zero(); shape.c];
    let mut inv_std = vec![T::zero(); shape.c];
    for c in 0..shape.c {
        let sum = channel_slices(x.data(), shape, c)
            .flatten()
            .fold(T::zero(), |a, &v| a + v);
        let mu = sum / m;
        let sq = channel_slices(x.data(), shape, c)
            .flatten()
            .fold(T::zero(), |a, &v| a + (v - mu) * (v - mu));
        let var = sq / m;
        mean[c] = mu;
        inv_std[c] = (var + eps).sqrt().recip();
        let unbiased = if count > 1 {
            sq / T::of((count - 1) as f64)
        } else {
            var
        };
        stats.mean[c] = (T::one() - momentum) * stats.mean[c] + momentum * mu;
        stats.var[c] = (T::one() - momentum) * stats.var[c] + momentum * unbiased;
    }
    let (out, xhat) = normalize(x, gamma, beta, &mean, &inv_std);
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            mode: BnMode::Train,
        },
    ))
}

pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let shape = cache.xhat.shape();
    if dout.shape() != shape {
        return shape_err(format!(
            "batchnorm upstream gradient has shape {}",
            dout.shape()
        ));
    }
    let hw = shape.h * shape.w;
    let m = T::of((shape.n * hw) as f64);
    let mut dgamma = Tensor::zeros(Shape::vector(shape.c));
    let mut dbeta = Tensor::zeros(Shape::vector(shape.c));
    for c in 0..shape.c {
        let (mut sg, mut sb) = (T::zero(), T::zero());
        for (gs, xs) in
            channel_slices(dout.data(), shape, c).zip(channel_slices(cache.xhat.data(), shape, c))
        {
            for (&g, &xh) in gs.iter().zip(xs) {
                sg = sg + g * xh;
                sb = sb + g;
            }
        }
        dgamma.data_mut()[c] = sg;
        dbeta.data_mut()[c] = sb;
    }
    let mut dx = Tensor::zeros(shape);
    for s in 0..shape.n {
        for c in 0..shape.c {
            let base = (s * shape.c + c) * hw;
            let scale = gamma.data()[c] * cache.inv_std[c];
            for i in base..base + hw {
                let g = dout.data()[i];
                dx.data_mut()[i] = match cache.mode {
                    BnMode::Eval => g * scale,
                    BnMode::Train => {
                        scale / m
                            * (m * g - dbeta.data()[c] - cache.xhat.data()[i] * dgamma.data()[c])
                    }
                };
            }
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}

// ---------------------------------------------------------------------------
// residual add, pooling, head, loss

pub fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "residual add needs identical shapes, got {} and {}",
            a.shape(),
            b.shape()
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.shape(), data)
}

/// Spatial mean per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let hw = s.h * s.w;
    let denom = T::of(hw as f64);
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) / denom)
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, dout: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape.h * input_shape.w;
    let denom = T::of(hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_exact_mut(hw).zip(dout.data()) {
        plane.fill(g / denom);
    }
    dx
}

/// Global average pool followed by the linear classifier head.
pub fn pool_and_classify<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    linear_forward(&global_avg_pool(x), w, b)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return shape_err(format!("logits must be (n, classes, 1, 1), got {s}"));
    }
    if labels.len() != s.n {
        return shape_err(format!("{} labels for a batch of {}", labels.len(), s.n));
    }
    let n = T::of(s.n as f64);
    let mut grad = Tensor::zeros(s);
    let mut total = T::zero();
    for (i, (row, &label)) in logits.data().chunks_exact(s.c).zip(labels).enumerate() {
        if label >= s.c {
            return shape_err(format!("label {label} out of range for {} classes", s.c));
        }
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let sum = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
        let log_z = max + sum.ln();
        total = total + (log_z - row[label]);
        let g = &mut grad.data_mut()[i * s.c..(i + 1) * s.c];
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            *gj = (p - if j == label { T::one() } else { T::zero() }) / n;
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let x = t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]);
        let eye = t(Shape::new(2, 2, 1, 1), &[1.0, 0.0, 0.0, 1.0]);
        let zero = t(Shape::vector(2), &[0.0, 0.0]);
        assert_eq!(linear_forward(&x, &eye, &zero).unwrap().data(), &[1.0, 2.0]);

        let x = t(Shape::new(1, 2, 1, 1), &[1.0, 1.0]);
        let ones = t(Shape::new(2, 2, 1, 1), &[1.0; 4]);
        let b = t(Shape::vector(2), &[1.0, 1.0]);
        assert_eq!(linear_forward(&x, &ones, &b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn linear_rejects_feature_mismatch() {
        let x = t(Shape::new(1, 3, 1, 1), &[1.0; 3]);
        let w = t(Shape::new(2, 2, 1, 1), &[1.0; 4]);
        let b = t(Shape::vector(2), &[0.0; 2]);
        assert!(matches!(linear_forward(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_single_sample_grad_is_outer_product() {
        let x = t(Shape::new(1, 2, 1, 1), &[2.0, 3.0]);
        let w = t(Shape::new(2, 2, 1, 1), &[1.0, 0.0, 0.0, 1.0]);
        let delta = t(Shape::new(1, 2, 1, 1), &[5.0, 7.0]);
        let g = linear_backward(&x, &w, &delta).unwrap();
        assert_eq!(g.dw.data(), &[10.0, 15.0, 14.0, 21.0]);
        assert_eq!(g.db.data(), &[5.0, 7.0]);
        assert_eq!(g.dx.data(), &[5.0, 7.0]);
    }

    #[test]
    fn relu_cases() {
        let x = t(Shape::new(1, 3, 1, 1), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = t(Shape::new(1, 2, 1, 1), &[-3.0, -0.5]);
        assert_eq!(relu_forward(&neg).data(), &[0.0, 0.0]);
        let pos = t(Shape::new(1, 2, 1, 1), &[3.0, 0.5]);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn conv_identity_1x1() {
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 5), |i| i as f64 * 0.25 - 3.0);
        let w = Tensor::from_fn(
            Shape::new(3, 3, 1, 1),
            |i| if i % 4 == 0 { 1.0 } else { 0.0 },
        );
        let b = Tensor::zeros(Shape::vector(3));
        assert_eq!(conv2d_forward(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_3x3_all_ones_center_is_nine() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let b = Tensor::zeros(Shape::vector(1));
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn conv_rejects_bad_configs() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor::zeros(Shape::vector(2));
        let w5 = Tensor::zeros(Shape::new(2, 2, 5, 5));
        assert!(matches!(
            conv2d_forward(&x, &w5, &b, 1, 2),
            Err(Error::Config(_))
        ));
        let w3 = Tensor::zeros(Shape::new(2, 2, 3, 3));
        assert!(matches!(
            conv2d_forward(&x, &w3, &b, 0, 1),
            Err(Error::Config(_))
        ));
        let tiny = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(
            conv2d_forward(&tiny, &w3, &b, 1, 0),
            Err(Error::Config(_))
        ));
        let wrong_cin = Tensor::zeros(Shape::new(2, 3, 3, 3));
        assert!(matches!(
            conv2d_forward(&x, &wrong_cin, &b, 1, 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = Tensor::from_fn(Shape::new(4, 2, 3, 3), |i| {
            ((i * 37 % 11) as f64) * 0.7 - 2.0
        });
        let gamma = t(Shape::vector(2), &[1.5, 0.5]);
        let beta = t(Shape::vector(2), &[-1.0, 2.0]);
        let mut stats = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &gamma, &beta, &mut stats, BnMode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = channel_slices(y.data(), y.shape(), c)
                .flatten()
                .copied()
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - beta.data()[c]).abs() < 1e-4);
            assert!((std - gamma.data()[c]).abs() < 1e-4);
        }
        assert!(stats.mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn batchnorm_zero_variance_channel_is_zero() {
        let x = Tensor::<f64>::full(Shape::new(3, 1, 2, 2), 4.0);
        let gamma = t(Shape::vector(1), &[1.0]);
        let beta = t(Shape::vector(1), &[0.0]);
        let mut stats = RunningStats::new(1);
        let (y, _) = batchnorm_forward(&x, &gamma, &beta, &mut stats, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_eval_matches_scalar_formula() {
        let x = t(Shape::new(1, 2, 1, 2), &[1.0, 2.0, -3.0, 0.5]);
        let gamma = t(Shape::vector(2), &[2.0, 0.5]);
        let beta = t(Shape::vector(2), &[0.1, -0.2]);
        let stats = RunningStats {
            mean: vec![0.5, -1.0],
            var: vec![4.0, 0.25],
        };
        let (y, _) = batchnorm_eval(&x, &gamma, &beta, &stats).unwrap();
        let want = |v: f64, c: usize| {
            (v - stats.mean[c]) / (stats.var[c] + 1e-5).sqrt() * gamma.data()[c] + beta.data()[c]
        };
        let expect = [want(1.0, 0), want(2.0, 0), want(-3.0, 1), want(0.5, 1)];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        let g = Tensor::zeros(Shape::vector(2));
        let mut stats = RunningStats::new(3);
        assert!(batchnorm_forward(&x, &g, &g, &mut stats, BnMode::Train).is_err());
    }

    #[test]
    fn residual_add_cases() {
        let a = Tensor::from_fn(Shape::new(1, 2, 2, 2), |i| i as f64 - 3.0);
        let z = Tensor::zeros(a.shape());
        assert_eq!(residual_add(&a, &z).unwrap(), a);
        let neg = a.map(|v| -v);
        assert!(residual_add(&a, &neg)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(residual_add(&a, &Tensor::zeros(Shape::new(1, 2, 2, 1))).is_err());
    }

    #[test]
    fn pooling_cases() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |i| if i < 9 { 2.5 } else { -1.0 });
        assert_eq!(global_avg_pool(&x).data(), &[2.5, -1.0]);
        let unit = Tensor::<f64>::from_fn(Shape::new(2, 3, 1, 1), |i| i as f64);
        assert_eq!(global_avg_pool(&unit), unit);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::<f64>::zeros(Shape::new(2, 4, 1, 1));
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!(softmax_cross_entropy(&logits, &[0, 4]).is_err());
    }

    #[test]
    fn cross_entropy_stable_for_large_logits() {
        let logits = t(Shape::new(1, 2, 1, 1), &[1000.0, -1000.0]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite() && grad.is_finite());
    }
}
