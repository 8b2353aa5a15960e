use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::derive_seed;

/// Sample-index batches for one epoch.
#[derive(Clone, Debug)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Shuffled batches of `data` for `epoch`. The order depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn batch_iter(data: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<BatchIter> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size must lie in 1..={}, got {batch_size}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = Pcg32::seed_from_u64(derive_seed(seed, &format!("batches.epoch{epoch}")));
    order.shuffle(&mut rng);
    Ok(BatchIter {
        order,
        batch_size,
        pos: 0,
    })
}
