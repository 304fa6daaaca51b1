//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. The generator is
//! SplitMix64: a 64-bit counter advanced by the golden-ratio increment
//! `0x9E3779B97F4A7C15` and passed through the finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Uniform reals in `[0, 1)` take the top 53 bits of one output. Independent
//! substreams are keyed by `(seed, stream)`: the substream state is the
//! finalizer applied to `seed ^ finalizer(stream + 1)`, so nearby seeds and
//! stream indices land far apart in the counter space.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type StreamRng = SplitMix64;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the whole run.
pub fn root(seed: u64) -> StreamRng {
    SplitMix64::seed_from_u64(seed)
}

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    SplitMix64::seed_from_u64(mix64(seed ^ mix64(stream.wrapping_add(1))))
}

/// Uniform draw in `[0, 1)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// `true` with probability `p` (exactly never for `p <= 0`, always for `p >= 1`).
pub fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    uniform(rng) < p
}

/// Index drawn by cumulative-weight inversion on a single uniform draw.
///
/// `cumulative` must be nondecreasing with last entry ~1. The first index whose
/// cumulative weight exceeds the draw wins; a draw beyond the final entry
/// (possible through rounding) maps to the last index with positive weight.
pub fn invert_cumulative(cumulative: &[f64], u: f64) -> usize {
    let idx = cumulative.partition_point(|&c| c <= u);
    if idx < cumulative.len() {
        return idx;
    }
    let last = *cumulative.last().expect("nonempty cumulative weights");
    cumulative.partition_point(|&c| c < last)
}

/// Running sums of `weights`.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of SplitMix64 seeded with 0.
        let mut r = root(0);
        assert_eq!(r.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(r.next_u64(), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn substreams_differ() {
        let a = substream(7, 0).next_u64();
        let b = substream(7, 1).next_u64();
        let c = substream(8, 0).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, substream(7, 0).next_u64());
    }

    #[test]
    fn inversion_skips_zero_weights() {
        let cum = cumulative(&[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(invert_cumulative(&cum, 0.0), 1);
        assert_eq!(invert_cumulative(&cum, 0.49), 1);
        assert_eq!(invert_cumulative(&cum, 0.5), 3);
        assert_eq!(invert_cumulative(&cum, 0.999_999), 3);
        // rounding overshoot
        let cum = vec![0.3, 0.6, 0.999_999_999, 0.999_999_999];
        assert_eq!(invert_cumulative(&cum, 0.999_999_999_5), 2);
    }

    #[test]
    fn bernoulli_endpoints() {
        let mut r = root(1);
        for _ in 0..1000 {
            assert!(bernoulli(&mut r, 1.0));
            assert!(!bernoulli(&mut r, 0.0));
        }
    }
}
