//! Seeded random streams.
//!
//! All randomness flows through explicit `ChaCha8Rng` values; there is no
//! global generator. Sub-streams are derived from a master seed with a
//! SplitMix64 mix so that independent consumers never share a sequence.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as SeededRng;

/// Creates the generator for `seed`.
pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Deterministically derives a child seed from `seed` and a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    seeded(derive_seed(seed, stream))
}
