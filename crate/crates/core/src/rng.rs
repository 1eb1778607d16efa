//! Seed derivation so per-item randomness does not depend on processing order.

/// SplitMix64 finalizer over two words.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a string key such as an episode id.
pub fn seed_for_key(seed: u64, key: &str) -> u64 {
    key.bytes().fold(mix_seed(seed, 0x6b65_79), |acc, b| mix_seed(acc, u64::from(b)))
}
