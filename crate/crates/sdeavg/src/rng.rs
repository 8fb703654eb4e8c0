//! Seeded random-number streams.
//!
//! Every stochastic operation in this crate draws from a named, versioned
//! generator so that a `(master_seed, index)` pair pins the noise down to the
//! bit. Independent paths (or Monte Carlo samples) get independent substreams
//! whose seeds are derived by hashing the master seed together with the
//! substream index; paths can then be simulated in any order, on any number
//! of threads, without changing the output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Identifier of the generator and substream derivation, recorded in reports.
pub const RNG_ALGORITHM: &str = "chacha12+splitmix64-substreams/v1";

/// SplitMix64 finalization step.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of substream `index` from a master seed.
///
/// Two mixing rounds keep nearby `(seed, index)` pairs statistically
/// unrelated even for small consecutive indices.
pub fn substream_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ splitmix64(index.wrapping_add(1))))
}

/// Generator for substream `index` of the given master seed.
pub fn substream_rng(master_seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(substream_seed(master_seed, index))
}

/// Generator seeded directly from a single value.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
