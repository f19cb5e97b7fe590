//! Seeded random substreams.
//!
//! Every source of randomness in the pipeline (class balancing, fold
//! shuffling, bootstrap resampling, cohort generation) draws from a named
//! substream derived from one run seed, so a rerun with the same seed is
//! bit-identical regardless of which stages execute or in what order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and versions.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for the named substream of `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(name.as_bytes())))
}

/// RNG for the `index`-th element of a named substream (one per forest
/// tree, one per synthetic patient, ...). Streams are independent across
/// indices.
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        splitmix64(seed ^ fnv1a64(name.as_bytes())) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15),
    ))
}
