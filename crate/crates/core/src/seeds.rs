//! Deterministic seed derivation so every artifact depends only on the
//! global seed and a stable label, never on iteration order elsewhere.

use sha2::{Digest, Sha256};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of the stream named `tag` under `base`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let digest = Sha256::digest(tag.as_bytes());
    let tag_bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    splitmix64(splitmix64(base ^ tag_bits).wrapping_add(index))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
