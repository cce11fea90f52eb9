//! Deterministic sub-streams for chunked parallel Monte Carlo.
//!
//! Work is split into fixed-size chunks. Each chunk gets its own ChaCha8
//! stream derived from `(seed, tag, chunk index)`, so results do not depend on
//! how rayon schedules the chunks or on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Starts (or pulses) per parallel work item.
pub const CHUNK_SIZE: u64 = 1 << 14;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a run label (arm, temperature index, ...) into a 64-bit key.
pub fn derive_key(seed: u64, tag: &[u64]) -> u64 {
    tag.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn chunk_rng(key: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(chunk);
    rng
}

/// `(chunk index, items in chunk)` covering `total` items.
pub fn chunks(total: u64) -> impl Iterator<Item = (u64, u64)> {
    let n = total.div_ceil(CHUNK_SIZE);
    (0..n).map(move |c| (c, CHUNK_SIZE.min(total - c * CHUNK_SIZE)))
}
