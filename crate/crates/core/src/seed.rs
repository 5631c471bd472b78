//! Deterministic seed derivation.

/// 64-bit FNV-1a hash, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Combines two seeds through a splitmix64 finalizer.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one conversation of a run.
pub fn conversation_seed(run_seed: u64, conversation_id: &str) -> u64 {
    mix(run_seed, fnv1a(conversation_id.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn conversation_seeds_differ() {
        assert_ne!(conversation_seed(1, "a"), conversation_seed(1, "b"));
        assert_ne!(conversation_seed(1, "a"), conversation_seed(2, "a"));
        assert_eq!(conversation_seed(7, "x"), conversation_seed(7, "x"));
    }
}
