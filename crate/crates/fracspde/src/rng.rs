//! Reproducible random number streams.
//!
//! Every stochastic object in the crate is a deterministic function of a
//! 64-bit seed. Ensembles derive one independent seed per replica from
//! `(master seed, replica index)` through a SplitMix64 jump, so replicas can
//! run concurrently in any order and reductions performed in replica order
//! are bit-stable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based derivation of a replica seed from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // SplitMix64 finalizer on master + index * golden gamma
    let mut z = master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn streams_reproduce_bitwise() {
        let x: Vec<u64> = (0..16).map(|_| seeded_rng(7).gen::<u64>()).collect();
        let mut r = seeded_rng(7);
        let first = r.gen::<u64>();
        assert!(x.iter().all(|&v| v == first));
    }
}
