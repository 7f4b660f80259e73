//! Seed derivation and Gaussian draws.
//!
//! Every stochastic stream is keyed by a tuple of integers (base seed,
//! iteration, purpose, index) so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

/// Stream tags used when deriving seeds.
pub mod stream {
    pub const PRIOR_CHAIN: u64 = 0x5052_494f;
    pub const POSTERIOR_NOISE: u64 = 0x504f_5354;
    pub const ELBO_NOISE: u64 = 0x454c_424f;
    pub const INIT_ENERGY: u64 = 0x494e_4531;
    pub const INIT_GENERATOR: u64 = 0x494e_4532;
    pub const INIT_INFERENCE: u64 = 0x494e_4533;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const DATA: u64 = 0x4441_5441;
    pub const EVAL: u64 = 0x4556_414c;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of keys into a new 64-bit seed.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(seed: u64, keys: &[u64]) -> Rng {
    seeded(derive(seed, keys))
}

#[inline]
pub fn normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}

pub fn normal_vec<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}
