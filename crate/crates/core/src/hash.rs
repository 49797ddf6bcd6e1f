//! Seedable 64-bit hashing shared by the sketches, feature hasher and
//! tie-breaking. Non-cryptographic; the seed is recorded in run metrics so
//! every hash-dependent artifact can be replayed.

/// Finalizer from the splitmix64 generator; full-avalanche 64 -> 64 mix.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded FNV-1a over the bytes, finalized with splitmix64 to fix FNV's
/// weak high bits (HyperLogLog reads leading-zero runs from them).
pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    splitmix64(h ^ (bytes.len() as u64))
}

/// Derive the i-th child seed from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}
