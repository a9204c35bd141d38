//! Seed derivation for independent, order-free random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags so that problem generation, noise and schedules never share a stream.
pub const PROBLEM_TAG: u64 = 0x7072_6f62;
pub const NOISE_TAG: u64 = 0x6e6f_6973;
pub const SCHEDULE_TAG: u64 = 0x7363_6865;
pub const VERIFY_TAG: u64 = 0x7665_7269;

/// splitmix64 finalizer over `seed ^ tag`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha stream keyed by `(seed, tag)` and selecting sub-stream `stream`.
pub fn stream(seed: u64, tag: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, tag));
    rng.set_stream(stream);
    rng
}

/// One private stream per node, used for stochastic gradient draws.
pub fn node_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|i| stream(seed, NOISE_TAG, i as u64)).collect()
}
