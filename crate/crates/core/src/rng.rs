//! Counter-based randomness keyed by tuples, so that draws do not depend on
//! the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One step of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 32-byte key derived from a label and a list of integers.
pub fn derive_key(label: &str, parts: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// A ChaCha8 stream seeded by `derive_key(label, parts)`.
pub fn keyed_rng(label: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(label, parts))
}

/// 64-bit value of the key, for use as a splitmix counter base.
pub fn key_u64(label: &str, parts: &[u64]) -> u64 {
    let k = derive_key(label, parts);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}
