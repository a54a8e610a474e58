//! Named random sub-streams derived from one root seed.
//!
//! Each component draws from its own stream, so adding draws in one component
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed from a parent seed and an index (trial, horizon, ...).
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    derive(derive(root, name), &index.to_string())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
