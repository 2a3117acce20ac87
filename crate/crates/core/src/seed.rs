//! Sub-seeds for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::mix;

/// Deterministic seed for the `index`-th stream of `purpose` under `seed`.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let h = purpose.bytes().fold(mix(0x7365_6564, seed), |h, b| mix(h, b as u64));
    mix(h, index)
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_by_purpose_and_index() {
        let a = derive_seed(1, "train", 0);
        assert_eq!(a, derive_seed(1, "train", 0));
        assert_ne!(a, derive_seed(1, "sample", 0));
        assert_ne!(a, derive_seed(1, "train", 1));
        assert_ne!(a, derive_seed(2, "train", 0));
    }
}
