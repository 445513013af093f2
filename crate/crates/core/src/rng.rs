//! Seeded, labelled random streams.
//!
//! Every stochastic step in the crate draws from a stream addressed by
//! `(seed, label, index)`. The stream key is `SHA-256(seed_le ‖ 0x00 ‖ label
//! ‖ 0x00 ‖ index_le)` and the generator is ChaCha12, so two streams with
//! different labels or indices are independent and any stream can be
//! reproduced from its address alone, independent of platform or thread
//! schedule. Normal variates come from `rand_distr`'s ziggurat sampler.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Deterministic ChaCha12 stream for `(seed, label, index)`.
pub fn stream_rng(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(key)
}
