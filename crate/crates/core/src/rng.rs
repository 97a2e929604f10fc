//! Seed derivation for reproducible, independent random substreams.
//!
//! Every stochastic step (validation split, batch permutation, dropout,
//! per-row sampling, shadow trials) draws from its own ChaCha stream keyed
//! by a base seed plus a short path of tags, so changing how many rows or
//! trials are requested never reshuffles earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into a single 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5EED_A5C1_0000_0001);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x1234_5678_9ABC_DEF1)));
    }
    h
}

/// Generator for the substream identified by `(seed, tags)`.
pub fn substream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable tag for a purpose label.
pub const fn tag(label: &str) -> u64 {
    // FNV-1a, usable in const context.
    let bytes = label.as_bytes();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < bytes.len() {
        h ^= bytes[i] as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
        i += 1;
    }
    h
}
