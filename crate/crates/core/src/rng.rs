//! Seeded generators.
//!
//! Every random stream is a ChaCha8 generator keyed by `(seed, stream)`.
//! ChaCha's 64-bit stream id selects a disjoint keystream, so independently
//! numbered streams never overlap no matter how many values each consumes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hashes labels into one stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &p| (h ^ p).wrapping_mul(0x0100_0000_01b3))
}
