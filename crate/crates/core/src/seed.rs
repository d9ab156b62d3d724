//! Stable seed derivation.
//!
//! Per-item RNG streams are derived from a study seed and an item key so that
//! results do not depend on iteration or worker order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded generator used everywhere in the crate.
pub type StudyRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(seed, key)`.
pub fn derive(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key.rotate_left(17) ^ 0x6D65_7461_6D6F_7270)
}

/// Stable 64-bit hash of `(seed, label)` for string keys.
pub fn derive_str(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes, then mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive(seed, h)
}

pub fn rng(seed: u64) -> StudyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: changing the mixer would silently change every mutated dataset.
        assert_eq!(derive(42, 1), 0x192f_a3dc_2b1a_bc1d);
        assert_eq!(derive(2021, 7), 0x3ec9_03d9_c8e8_5b88);
        assert_eq!(derive_str(2021, "select"), 0x424f_2814_beee_b698);
        assert_ne!(derive(42, 1), derive(42, 2));
        assert_ne!(derive(42, 1), derive(43, 1));
        assert_ne!(derive_str(1, "TC01"), derive_str(1, "TC02"));
    }
}
