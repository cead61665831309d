//! Named, independent random streams.
//!
//! Every consumer of randomness (prompt sampling, candidate generation, each
//! judge, evaluation) draws from its own ChaCha stream keyed by a 64-bit seed
//! and a text tag, so two consumers never share a stream and adding draws to
//! one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Stream keyed by `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn tags_separate_streams() {
        let a: u64 = stream(1, "annotator").random();
        let b: u64 = stream(1, "evaluator").random();
        let c: u64 = stream(1, "annotator").random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
