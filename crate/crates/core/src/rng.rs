//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a path of
//! labelled components, so results do not depend on the order in which work
//! items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builder for a derived seed: `SeedPath::new(global).str("combo").u64(3).seed()`.
#[derive(Clone)]
pub struct SeedPath {
    hasher: Sha256,
}

impl SeedPath {
    pub fn new(base: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"ppmxai-seed");
        hasher.update(base.to_le_bytes());
        Self { hasher }
    }

    pub fn str(mut self, part: &str) -> Self {
        self.hasher.update((part.len() as u64).to_le_bytes());
        self.hasher.update(part.as_bytes());
        self
    }

    pub fn u64(mut self, part: u64) -> Self {
        self.hasher.update([0xff]);
        self.hasher.update(part.to_le_bytes());
        self
    }

    pub fn seed(self) -> u64 {
        let digest = self.hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest.as_slice()[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn rng(self) -> StreamRng {
        seeded(self.seed())
    }
}
