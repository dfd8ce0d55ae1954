//! Stable hashing and seed derivation.
//!
//! Everything that feeds an RNG seed or a synthetic response must be stable
//! across processes and toolchains, so `std`'s randomized hashers are out.

/// 64-bit FNV-1a over raw bytes.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Combines two seeds with a SplitMix64 finalizer.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b.rotate_left(17).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of components into one seed.
pub fn mix_all(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, p| mix(acc, *p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(stable_hash(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stable_hash(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix_all(&[1, 2]), mix_all(&[2, 1]));
        assert_eq!(mix_all(&[1, 2]), mix_all(&[1, 2]));
    }
}
