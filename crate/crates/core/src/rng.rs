//! Seed handling. Every stochastic routine takes an explicit generator; child
//! streams are derived from a parent seed and an index so that parallel work
//! stays reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit seed for a `(parent, tag, index)` triple.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn derived(parent: u64, tag: &str, index: u64) -> Rng {
    seeded(derive_seed(parent, tag, index))
}
