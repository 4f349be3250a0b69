//! Counter-based random streams.
//!
//! Every chain, replicate and experiment cell owns a ChaCha stream addressed
//! by `(seed, keys)`. Streams never depend on scheduling, so serial and
//! parallel execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds an arbitrary key path into a single 64-bit stream id.
pub fn stream_id(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(keys.len() as u64), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Independent stream for the key path `keys` under the master `seed`.
pub fn stream_rng(seed: u64, keys: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(keys));
    rng
}

/// Stable 64-bit key for a short label (FNV-1a).
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
