//! Datasets: CIFAR-100 binary files and seeded synthetic images.

mod batch;
mod cifar;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use batch::{batch_iter, BatchIter};
pub use cifar::{load_cifar100, read_cifar100, write_cifar100, CIFAR_RECORD_BYTES, CIFAR_SIDE};
pub use synth::{synth_dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled images stored as raw bytes; tensors scale them to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pixels: Vec<u8>,
    /// Shape of the whole image set, `(n, 3, h, w)`.
    shape: Shape,
    labels: Vec<usize>,
    /// CIFAR coarse labels when read from a CIFAR file.
    coarse: Option<Vec<u8>>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        pixels: Vec<u8>,
        shape: Shape,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if !shape.is_valid() || pixels.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} pixel bytes do not fill image shape {shape}",
                pixels.len()
            )));
        }
        if labels.len() != shape.n {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                shape.n
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!(
                "label {bad} is out of range for {classes} classes"
            )));
        }
        Ok(Self {
            pixels,
            shape,
            labels,
            coarse: None,
            classes,
            split,
        })
    }

    pub(crate) fn with_coarse(mut self, coarse: Vec<u8>) -> Self {
        self.coarse = Some(coarse);
        self
    }

    pub fn len(&self) -> usize {
        self.shape.n
    }

    pub fn is_empty(&self) -> bool {
        self.shape.n == 0
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn image_shape(&self) -> Shape {
        self.shape.with_batch(1)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn coarse_labels(&self) -> Option<&[u8]> {
        self.coarse.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// All images as one tensor, pixels divided by 255.
    pub fn images<T: Scalar>(&self) -> Tensor<T> {
        let scale = T::of(255.0);
        Tensor::from_fn(self.shape, |i| T::of(f64::from(self.pixels[i])) / scale)
    }

    /// Images and labels of the given samples, in the given order.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per = self.shape.sample_len();
        let scale = T::of(255.0);
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(
                self.pixels[i * per..(i + 1) * per]
                    .iter()
                    .map(|&p| T::of(f64::from(p)) / scale),
            );
        }
        let x =
            Tensor::new(self.shape.with_batch(indices.len()), data).expect("gathered sizes agree");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}
