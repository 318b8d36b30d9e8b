//! Seeded random streams.
//!
//! Every consumer of randomness gets a ChaCha8 generator keyed by a seed and a
//! stream number, so replicate `b` sees the same draws no matter which worker
//! runs it or in what order.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A seed for child task `index`, decorrelated from `seed` by SplitMix64.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` indices drawn uniformly from `0..n` with replacement.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Multiplicity of each index in `draws`.
pub fn counts(draws: &[usize], n: usize) -> Vec<usize> {
    let mut c = alloc::vec![0; n];
    for &d in draws {
        c[d] += 1;
    }
    c
}
