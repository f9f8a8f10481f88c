//! Reproducible random substreams.
//!
//! Every random draw in a Monte Carlo run is taken from a stream derived
//! from `(master seed, stream key, index)`, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Well-known stream keys. Stratum streams use the stratum position offset
/// by [`STRATUM_BASE`].
pub mod keys {
    pub const NAIVE: u64 = 0x6e61_6976;
    pub const RESIDUAL: u64 = 0x7265_7369;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const SHOTS: u64 = 0x7368_6f74;
    pub const STRATUM_BASE: u64 = 1 << 40;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream for `(seed, key, index)`.
pub fn substream(seed: u64, key: u64, index: u64) -> Stream {
    let mut bytes = [0u8; 32];
    let mut state = splitmix64(seed) ^ splitmix64(key.rotate_left(17)) ^ index.rotate_left(41);
    for chunk in bytes.chunks_exact_mut(8) {
        state = splitmix64(state ^ index);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Mixes a list of integers (e.g. a stratum key) into a single stream key.
pub fn mix_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51_7cc1_b727_220a, |acc, &p| splitmix64(acc ^ p))
}
