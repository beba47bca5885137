//! Seed derivation. Every random stream is a pure function of a master seed
//! and a path of integer tags; there is no global generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `tag` under `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed.wrapping_add(GOLDEN).wrapping_add(mix(tag.wrapping_mul(GOLDEN))))
}

/// Generator for stream `stream` of `seed`. Distinct streams of one seed are
/// independent ChaCha streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
