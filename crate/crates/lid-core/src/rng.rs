//! Deterministic RNG streams.
//!
//! Every stochastic routine takes an explicit seed; parallel tasks derive
//! independent streams from (seed, stream ids) with a counter-based mix so
//! results do not depend on scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically mix a seed with a stream tag, for deriving seeds of
/// shared resources (sample banks, probe streams) from one experiment seed.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// RNG for a single top-level seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for a derived stream identified by up to three indices.
pub fn derived(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(seed),
        splitmix64(seed ^ splitmix64(a.wrapping_add(1))),
        splitmix64(seed ^ splitmix64(b.wrapping_add(2)) ^ 0x5151_5151_5151_5151),
        splitmix64(seed ^ splitmix64(c.wrapping_add(3)) ^ 0xa3a3_a3a3_a3a3_a3a3),
    ];
    for (i, w) in words.iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
