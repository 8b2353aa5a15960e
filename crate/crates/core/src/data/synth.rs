use rand::{RngExt, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Shape};

/// Parameters of the synthetic image distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    /// Standard deviation of the per-pixel Gaussian noise, in `[0, 1]` units.
    pub noise: f64,
    /// Gaussian blobs per class pattern.
    pub blobs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            classes: 20,
            h: 8,
            w: 8,
            noise: 0.25,
            blobs: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "synthetic.classes must be >= 2, got {}",
                self.classes
            )));
        }
        if self.h == 0 || self.w == 0 {
            return Err(Error::Config(
                "synthetic.h and synthetic.w must be >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "synthetic.noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if self.blobs == 0 {
            return Err(Error::Config("synthetic.blobs must be >= 1".into()));
        }
        Ok(())
    }

    /// Noise-free class patterns, `(classes, 3, h, w)` in `[0, 1]`.
    pub fn class_means(&self) -> Vec<f64> {
        let mut rng = Pcg32::seed_from_u64(derive_seed(self.seed, "synthetic.means"));
        let (h, w) = (self.h as f64, self.w as f64);
        let plane = self.h * self.w;
        let mut out = vec![0.0; self.classes * 3 * plane];
        for k in 0..self.classes {
            let pattern = &mut out[k * 3 * plane..(k + 1) * 3 * plane];
            for _ in 0..self.blobs {
                let cy = rng.random_range(0.0..h);
                let cx = rng.random_range(0.0..w);
                let sigma = rng.random_range(0.15..0.35) * h.max(w);
                let colour: [f64; 3] = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                for (c, &amp) in colour.iter().enumerate() {
                    for y in 0..self.h {
                        for x in 0..self.w {
                            let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                            pattern[c * plane + y * self.w + x] +=
                                0.3 * amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
            }
            for v in pattern.iter_mut() {
                *v = (0.5 + *v).clamp(0.0, 1.0);
            }
        }
        out
    }
}

/// `n` images with balanced labels (`label = i % classes`): the class pattern
/// plus seeded Gaussian noise, quantized to bytes. Train and test splits
/// share patterns but draw independent noise.
pub fn synth_dataset(cfg: &SynthConfig, n: usize, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    if n < cfg.classes {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least one sample per class: n={n}, classes={}",
            cfg.classes
        )));
    }
    let means = cfg.class_means();
    let per = 3 * cfg.h * cfg.w;
    let mut rng = Pcg32::seed_from_u64(derive_seed(cfg.seed, &format!("synthetic.noise.{split}")));
    let mut pixels = Vec::with_capacity(n * per);
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    for &label in &labels {
        for &m in &means[label * per..(label + 1) * per] {
            let z: f64 = rng.sample(StandardNormal);
            let v = (m + cfg.noise * z).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    Dataset::new(
        pixels,
        Shape::new(n, 3, cfg.h, cfg.w),
        labels,
        cfg.classes,
        split,
    )
}
