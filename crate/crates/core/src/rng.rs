//! Deterministic seed derivation.
//!
//! Every random stream is keyed by `(base seed, tag, indices...)`, so parallel
//! execution order never changes which numbers a replicate sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a short ASCII tag (FNV-1a).
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Child seed for stream `tag` at position `indices` below `base`.
pub fn derive_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ tag_hash(tag));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x2545_F491_4F6C_DD1D)));
    }
    h
}

pub fn stream(base: u64, tag: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tag, indices))
}
