//! Seed derivation for reproducible, schedule-independent randomness.
//!
//! Every parallel task (tree, replication, drop draw) gets its own stream
//! derived from a master seed and a key path, so results do not depend on
//! thread count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key path into a single derived seed.
pub fn derive_seed(seed: u64, lanes: &[u64]) -> u64 {
    let mut s = mix(seed);
    for &lane in lanes {
        s = mix(s ^ mix(lane));
    }
    s
}

/// An independent ChaCha stream for the given key path.
pub fn stream(seed: u64, lanes: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, lanes))
}
