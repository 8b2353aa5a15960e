use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v <- momentum * v + grad; value <- value - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    lr: T,
    momentum: T,
    velocity: Vec<Tensor<T>>,
    steps: usize,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be a finite value >= 0, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr: T::of(lr),
            momentum: T::of(momentum),
            velocity: Vec::new(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update. Refuses to touch any parameter if a gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", bad.name),
                step: self.steps,
            });
        }
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            for ((val, &g), vel) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut())
            {
                *vel = self.momentum * *vel + g;
                *val = *val - self.lr * *vel;
            }
        }
        self.steps += 1;
        Ok(())
    }
}
