//! Minibatch SGD training and accuracy evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Sgd, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "training.lr must be finite and > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "training.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Mean training loss of every epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Trains `model` in place. A non-finite loss or gradient aborts with the
/// step index.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut sgd = Sgd::<T>::new(cfg.lr, cfg.momentum)?;
    let mut tape = Tape::new();
    let mut log = TrainLog::default();
    let batch_size = cfg.batch_size.min(data.len());
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in batch_iter(data, batch_size, cfg.seed, epoch)? {
            let (x, labels) = data.gather::<T>(&batch);
            tape.clear();
            let logits = model.forward_train(&mut tape, x)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let value = tape.scalar(loss)?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss".into(),
                    step: log.steps,
                });
            }
            model.params_mut().zero_grad();
            tape.backward(loss, model.params_mut())?;
            sgd.step(model.params_mut()).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite {
                    what,
                    step: log.steps,
                },
                other => other,
            })?;
            total += value * batch.len() as f64;
            log.steps += 1;
        }
        log.epoch_loss.push(total / data.len() as f64);
    }
    Ok(log)
}

/// Top-1 accuracy in `[0, 1]` using inference-mode BatchNorm.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let batch_size = batch_size.clamp(1, data.len());
    let mut correct = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = data.gather::<T>(chunk);
        let logits = model.forward(&x)?;
        let classes = logits.shape().c;
        for (s, &label) in labels.iter().enumerate() {
            let row = &logits.data()[s * classes..(s + 1) * classes];
            let pred = (0..classes).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(pred == label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Split, SynthConfig};
    use crate::model::{build_resnet, BottleneckRatio, Variant};
    use crate::tensor::Shape;

    #[test]
    fn short_run_lowers_loss_and_is_deterministic() {
        let synth = SynthConfig {
            classes: 4,
            ..SynthConfig::default()
        };
        let data = synth_dataset(&synth, 64, Split::Train).unwrap();
        let g = build_resnet(
            Variant::Tiny,
            BottleneckRatio::IDENTITY,
            4,
            Shape::new(1, 3, 8, 8),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut a = Model::<f32>::init(g.clone(), 1);
        let log_a = train(&mut a, &data, &cfg).unwrap();
        let mut b = Model::<f32>::init(g, 1);
        let log_b = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(log_a, log_b);
        assert!(
            log_a.epoch_loss[3] < log_a.epoch_loss[0],
            "{:?}",
            log_a.epoch_loss
        );
        let acc = evaluate(&a, &data, 32).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("training.momentum"));
    }
}
