use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

use super::{Scalar, Shape, Tensor};

/// Derives an independent stream seed for `label` from a master seed.
///
/// FNV-1a over the label bytes, mixed with the master seed through the
/// SplitMix64 finalizer. Stable across platforms and releases.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit-state PRNG dedicated to one named parameter.
pub fn param_rng(master: u64, name: &str) -> Pcg32 {
    Pcg32::seed_from_u64(derive_seed(master, name))
}

/// Uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
pub fn fan_in_uniform<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut Pcg32) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}
