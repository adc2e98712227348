//! Seeded randomness. Everything stochastic in the crate goes through
//! ChaCha8 streams so that runs replay bit-exactly from their seeds.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::field::{FieldRole, FieldShape, ImageField};

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed. Different tags give
/// streams that never collide for the same base seed.
pub fn derived(seed: u64, tag: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[inline]
pub fn normal(rng: &mut SeedRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_field(shape: FieldShape, role: FieldRole, rng: &mut SeedRng) -> ImageField {
    let mut out = ImageField::zeros(shape, role);
    for v in out.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    out
}
