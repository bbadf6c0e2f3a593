//! Deterministic RNG streams.
//!
//! Every random quantity in the crate is drawn from a [`StdRng`] seeded
//! through this module. Independent streams (one per sweep run, one per
//! training step, one per evaluation unit, ...) are derived from a base seed
//! with [`derive_seed`], so results are reproducible bit-for-bit and
//! independent of execution order or parallelism.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

/// Derives an independent stream seed from a base seed and a stream index.
///
/// The rule is fixed and documented so that outputs are reproducible across
/// processes: the base is offset by `(index + 1)` multiples of the golden
/// ratio increment and passed through one round of the SplitMix64 finalizer.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded RNG for one stream.
pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Draws `n` independent standard-normal values.
pub fn standard_normal_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// In-place Fisher-Yates shuffle driven by the given stream.
pub fn shuffle<T>(rng: &mut StdRng, items: &mut [T]) {
    use rand::distr::Uniform;
    for i in (1..items.len()).rev() {
        let j = Uniform::new(0, i + 1).expect("valid range").sample(rng);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let mut r1 = seeded(7);
        let mut r2 = seeded(7);
        assert_eq!(
            standard_normal_vec(&mut r1, 16),
            standard_normal_vec(&mut r2, 16)
        );
    }
}
