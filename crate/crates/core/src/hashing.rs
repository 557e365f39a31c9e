//! Small, fully specified 64-bit hash functions.
//!
//! The hash embedder and per-query seeding must produce identical values on
//! every platform and in other languages, so nothing here may depend on
//! `std::hash` (whose output is unspecified across releases).

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded hash of a UTF-8 string: `mix64(fnv1a64(s) ^ mix64(seed))`.
pub fn seeded_hash(s: &str, seed: u64) -> u64 {
    mix64(fnv1a64(s.as_bytes()) ^ mix64(seed))
}
