//! Platform-stable seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SEED_TAG: &[u8] = b"spiral-seed-v1";

/// Derives an independent 64-bit seed for `(domain, index)` from `master`.
///
/// The derivation is SHA-256 over a length-prefixed encoding, so it is
/// identical on every platform and distinct domains never collide by
/// concatenation.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(SEED_TAG);
    hasher.update(master.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Stable value in `[-1, 1]` for a text key.
pub fn unit_hash(key: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(b"spiral-unit-v1");
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let top = u64::from_le_bytes(head) >> 11;
    2.0 * (top as f64 / ((1u64 << 53) - 1) as f64) - 1.0
}

/// The generator used for every seeded draw in the simulator.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
