//! Seeded randomness helpers.
//!
//! Every stochastic routine in the crate takes an explicit `u64` seed and
//! builds a [`ChaCha8Rng`] from it, so identical inputs always reproduce
//! identical outputs. When one seed must fan out into several independent
//! streams (per record, per epoch, per draw), [`derive_seed`] mixes the parent
//! seed with a stream index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Build the crate's standard RNG from a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed from a parent seed and a stream index.
///
/// Uses the splitmix64 finalizer, which maps distinct (seed, stream) pairs to
/// well-spread outputs; collisions across the handful of streams any one run
/// creates are not a practical concern.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream)
        .wrapping_add(0x243f_6a88_85a3_08d3);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
