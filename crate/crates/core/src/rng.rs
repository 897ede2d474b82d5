//! Counter-based random streams.
//!
//! Every scenario and every generated sample owns an independent ChaCha
//! stream selected by `(seed, index)`, so results do not depend on how work
//! is partitioned or ordered.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Independent stream number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(rng)).collect()
}

pub fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out {
        *v = normal(rng);
    }
}

/// Uniform draw on `[0, 1)`.
pub fn uniform(rng: &mut StreamRng) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}

/// Fisher–Yates shuffle.
pub fn shuffle<T>(rng: &mut StreamRng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

pub fn below(rng: &mut StreamRng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}
