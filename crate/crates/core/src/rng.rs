//! Deterministic random streams.
//!
//! Every stochastic draw in the toolkit comes from a ChaCha stream keyed by
//! a small tuple of integers, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream keyed by `(seed, a, b)`.
pub fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&a.to_le_bytes());
    key[16..24].copy_from_slice(&b.to_le_bytes());
    key[24..].copy_from_slice(b"mmfuse01");
    ChaCha8Rng::from_seed(key)
}

/// Purpose tags used as the first key component below the seed.
pub(crate) mod purpose {
    pub const INIT: u64 = 0x1000_0000;
    pub const BATCHES: u64 = 0x2000_0000;
    pub const SPLIT: u64 = 0x3000_0000;
    pub const SYNTH: u64 = 0x4000_0000;
    pub const SYNTH_PARAMS: u64 = 0x4100_0000;
    pub const SYNTH_CALIBRATION: u64 = 0x4200_0000;
}
