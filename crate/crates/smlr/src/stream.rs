//! Seeded RNG stream derivation.
//!
//! Every source of randomness in the crate is a ChaCha stream derived from
//! the master seed plus a list of context tags (purpose, meta-iteration,
//! task index, ...). Derivation is a pure function, so any point of a run
//! can be reproduced without replaying the stream that preceded it, and
//! independent streams can be consumed concurrently without changing
//! results.

use rand::SeedableRng;

pub type StreamRng = rand_chacha::ChaCha8Rng;

/// Stream purposes. Keeping them disjoint guarantees that e.g. evaluation
/// never perturbs the training stream.
pub mod tag {
    pub const INIT: u64 = 0x01;
    pub const SOURCE: u64 = 0x02;
    pub const ROUND: u64 = 0x03;
    pub const EVAL: u64 = 0x04;
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed and context tags into a single stream seed.
pub fn mix(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &t in tags {
        h = splitmix64(h ^ t);
    }
    h
}

/// Derives an independent RNG stream for `(master, tags)`.
pub fn derive(master: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(mix(master, tags))
}
