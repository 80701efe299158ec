//! Seed hierarchy. A root seed is split into named, independent streams so
//! that adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(root: u64) -> Self {
        SeedStream(root)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    /// Derive a named child stream.
    pub fn child(self, label: &str) -> SeedStream {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        h.update(label.as_bytes());
        SeedStream(first_u64(&h.finalize()))
    }

    /// Derive an indexed child stream.
    pub fn index(self, i: u64) -> SeedStream {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        h.update(b"#");
        h.update(i.to_le_bytes());
        SeedStream(first_u64(&h.finalize()))
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn first_u64(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(b)
}

/// Seeded RNG keyed by arbitrary bytes (used for content-addressed stubs).
pub fn rng_from_bytes(seed: u64, bytes: &[u8]) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(bytes);
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
