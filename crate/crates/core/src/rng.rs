//! Deterministic, stream-splittable random number generation.
//!
//! Every replication `r` of an experiment draws from the ChaCha stream
//! `(master_seed, r)`. Streams are independent by construction, so
//! replications can run on any number of threads in any order and still
//! reproduce bit-identical results.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// RNG for stream `stream` of the generator seeded with `master_seed`.
pub fn stream_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Draws one index from the distribution with cumulative weights `cum`
/// (non-decreasing, last entry = total mass > 0).
pub fn sample_cdf(cum: &[f64], rng: &mut StreamRng) -> usize {
    let total = *cum.last().expect("non-empty cdf");
    debug_assert!(total > 0.0);
    let u = rng.gen::<f64>() * total;
    // First index with cum[i] > u; u < total keeps this in range, the
    // final clamp guards the roundoff case u ~ total.
    let idx = cum.partition_point(|&c| c <= u);
    idx.min(cum.len() - 1)
}

/// Cumulative sums of `weights`.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    cum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream_rng(7, 0);
        let mut b = stream_rng(7, 0);
        let mut c = stream_rng(7, 1);
        let xa: Vec<u64> = (0..4).map(|_| a.gen()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.gen()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.gen()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn sample_cdf_point_mass() {
        let cum = cumulative(&[0.0, 3.0, 0.0]);
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_cdf(&cum, &mut rng), 1);
        }
    }
}
