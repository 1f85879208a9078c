//! Labeled seed derivation.
//!
//! Every stochastic component of a run gets its seed from a parent seed and a
//! textual label: `derive(parent, label)` is the first eight bytes (little
//! endian) of `SHA-256(parent.to_le_bytes() || label)`. Distinct labels give
//! independent streams; the same `(parent, label)` always gives the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for `(seed, label)`.
pub fn rng(parent: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label))
}

/// Generator for a numbered sub-stream, e.g. one epoch or one round.
pub fn indexed_rng(parent: u64, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
