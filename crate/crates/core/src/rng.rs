use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used everywhere randomness is needed. ChaCha output is
/// specified bit-for-bit, so runs reproduce across platforms.
pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed for a pipeline stage from the run seed
/// (SplitMix64 finalizer over `seed ^ tag`).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
