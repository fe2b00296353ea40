//! Seed streams.
//!
//! Every random draw in the crate goes through an explicit `u64` seed. Derived
//! seeds are pure functions of `(seed, stream, index)`, so results never depend
//! on evaluation order or on how work is split between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use alloc::vec::Vec;

/// Purpose tags for derived seeds.
pub mod stream {
    pub const POWER_START: u64 = 0x01;
    pub const GRADIENT_SAMPLE: u64 = 0x10;
    pub const HESSIAN_SAMPLE: u64 = 0x11;
    pub const TENSOR_SAMPLE: u64 = 0x12;
    pub const SUBSOLVER: u64 = 0x20;
    pub const CRITICALITY: u64 = 0x21;
    pub const SIGMA_DRAW: u64 = 0x22;
    pub const VERIFY: u64 = 0x23;
    pub const PROBLEM_DATA: u64 = 0x30;
    pub const TRIAL: u64 = 0x40;
    pub const PROBE: u64 = 0x41;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(stream, index)` from a parent seed.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ splitmix64(index)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn gaussian_vec<R: rand::Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform point on the unit sphere in `R^d`.
pub(crate) fn unit_vec<R: rand::Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}
