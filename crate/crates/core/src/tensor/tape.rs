use super::ops::{self, BnCache, BnMode, RunningStats};
use super::{ParamId, ParamStore, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    Conv2d {
        x: Var,
        w: ParamId,
        b: ParamId,
        stride: usize,
        pad: usize,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        cache: BnCache<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        dlogits: Tensor<T>,
    },
}

struct Entry<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward pass so [`Tape::backward`] can replay it in reverse.
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.entries[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.entries.push(Entry { value, op });
        Var(self.entries.len() - 1)
    }

    /// A constant input; gradients stop here.
    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.push(x, Op::Leaf)
    }

    pub fn linear(
        &mut self,
        params: &ParamStore<T>,
        x: Var,
        w: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let y = ops::linear_forward(self.value(x), params.value(w), params.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        params: &ParamStore<T>,
        x: Var,
        w: ParamId,
        b: ParamId,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(x), params.value(w), params.value(b), stride, pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu_forward(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn batch_norm(
        &mut self,
        params: &ParamStore<T>,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        stats: &mut RunningStats<T>,
        mode: BnMode,
    ) -> Result<Var> {
        let (y, cache) = ops::batchnorm_forward(
            self.value(x),
            params.value(gamma),
            params.value(beta),
            stats,
            mode,
        )?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::residual_add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = ops::global_avg_pool(self.value(x));
        self.push(y, Op::GlobalAvgPool { x })
    }

    /// Mean softmax cross-entropy; the result is a `(1, 1, 1, 1)` scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, dlogits) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let y = Tensor::full(Shape::vector(1), loss);
        Ok(self.push(y, Op::CrossEntropy { logits, dlogits }))
    }

    /// Scalar value of a loss recorded on this tape.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let t = self
            .entries
            .get(v.0)
            .ok_or_else(|| Error::Usage("value is not recorded on this tape".into()))?;
        match t.value.data() {
            [x] => Ok(*x),
            _ => Err(Error::Usage(format!(
                "loss must be a scalar, got {}",
                t.value.shape()
            ))),
        }
    }

    /// Accumulates `d loss / d param` into every parameter reached from `loss`.
    /// Parameters the loss does not depend on are left untouched.
    pub fn backward(&self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Usage(
                "backward called before any forward pass was recorded".into(),
            ));
        }
        let seed = self.scalar(loss)?;
        if !seed.is_finite() {
            return Err(Error::NonFinite {
                what: "loss".into(),
                step: 0,
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(Shape::vector(1), T::one()));

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            match &self.entries[idx].op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let g = ops::linear_backward(self.value(*x), params.value(*w), &dout)?;
                    params.get_mut(*w).grad.add_assign(&g.dw)?;
                    params.get_mut(*b).grad.add_assign(&g.db)?;
                    accumulate(&mut grads[x.0], g.dx)?;
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let g = ops::conv2d_backward(
                        self.value(*x),
                        params.value(*w),
                        *stride,
                        *pad,
                        &dout,
                    )?;
                    params.get_mut(*w).grad.add_assign(&g.dw)?;
                    params.get_mut(*b).grad.add_assign(&g.db)?;
                    accumulate(&mut grads[x.0], g.dx)?;
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &dout);
                    accumulate(&mut grads[x.0], dx)?;
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let g = ops::batchnorm_backward(cache, params.value(*gamma), &dout)?;
                    params.get_mut(*gamma).grad.add_assign(&g.dgamma)?;
                    params.get_mut(*beta).grad.add_assign(&g.dbeta)?;
                    accumulate(&mut grads[x.0], g.dx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[b.0], dout.clone())?;
                    accumulate(&mut grads[a.0], dout)?;
                }
                Op::GlobalAvgPool { x } => {
                    let dx = ops::global_avg_pool_backward(self.value(*x).shape(), &dout);
                    accumulate(&mut grads[x.0], dx)?;
                }
                Op::CrossEntropy { logits, dlogits } => {
                    let scale = dout.data()[0];
                    accumulate(&mut grads[logits.0], dlogits.map(|v| v * scale))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    #[test]
    fn backward_without_forward_is_usage_error() {
        let tape = Tape::<f64>::new();
        let mut params = ParamStore::new();
        let err = tape.backward(Var(0), &mut params).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut params = ParamStore::<f64>::new();
        let w = params.add(Parameter::new(
            "w",
            Tensor::full(Shape::new(2, 2, 1, 1), 0.5),
        ));
        let b = params.add(Parameter::new("b", Tensor::zeros(Shape::vector(2))));
        let unused = params.add(Parameter::new(
            "unused",
            Tensor::full(Shape::vector(3), 1.0),
        ));
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(Shape::new(1, 2, 1, 1), vec![1.0, -2.0]).unwrap());
        let y = tape.linear(&params, x, w, b).unwrap();
        let loss = tape.softmax_cross_entropy(y, &[1]).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert!(params.get(unused).grad.data().iter().all(|&g| g == 0.0));
        assert!(params.get(w).grad.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(Shape::new(1, 2, 1, 1)));
        let mut params = ParamStore::new();
        assert!(matches!(
            tape.backward(x, &mut params),
            Err(Error::Usage(_))
        ));
    }
}
