//! Seeded random streams.
//!
//! Every stochastic component draws from a [`SimRng`] derived from one root
//! seed plus a stream name and index, so sub-computations stay reproducible
//! independently of each other and of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream name.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = splitmix(seed);
    for b in stream.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    h
}

/// Named, indexed sub-stream (e.g. `("rollout", 17)`).
pub fn stream(seed: u64, name: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(splitmix(derive_seed(seed, name) ^ splitmix(index)))
}

pub fn from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
