//! Deterministic derivation of independent RNG streams from one master seed.
//!
//! Every randomized component takes a plain `u64` seed and expands it with
//! ChaCha12. Child streams (fold repetitions, simulation replications,
//! evaluation draws) get their own seed through [`child_seed`], so results
//! never depend on scheduling order or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Derives the seed for child stream `index` of the stream seeded by `base`.
///
/// Uses a SplitMix64 finalizer over the keyed index, which disperses
/// consecutive indices into uncorrelated seeds.
pub fn child_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the RNG used throughout the crate from a plain seed.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
