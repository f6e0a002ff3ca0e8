//! Seed derivation for independent, coordination-free random streams.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of `parts`: each part is folded in as
/// `h = mix64(h ^ part)` starting from `mix64(len)`.
pub fn combine(parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(parts.len() as u64), |h, p| mix64(h ^ p))
}

/// Stable 64-bit hash of a label, for folding names into seeds (FNV-1a).
pub fn label_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
