//! Named random sub-streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const TASK_GEN: &str = "task-gen";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const MINING: &str = "mining";
pub const EMBEDDING: &str = "embedding";

/// Generator for the stream `name` of run `seed`; streams are independent
/// of each other and of the order in which they are requested.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Sub-stream further keyed by an index, e.g. an episode or epoch.
pub fn indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    substream(seed, &format!("{name}#{index}"))
}
