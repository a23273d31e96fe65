//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded through
//! these helpers, so a run is fully determined by one master seed. Derived
//! streams (per episode, per training step, per sample) are independent of
//! each other and of how many draws earlier streams consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates consecutive integers well.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a master seed with a stream index into a new seed.
pub fn mix(master: u64, stream: u64) -> u64 {
    splitmix(master ^ splitmix(stream))
}

/// RNG for a named sub-stream of a master seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, stream))
}

/// Fixed stream tags, so call sites cannot collide by accident.
pub mod streams {
    pub const PARAM_INIT: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const PROTOTYPES: u64 = 4;
    pub const DROPOUT: u64 = 5;
}
