//! Seeded random streams.
//!
//! Every randomized step draws from its own generator keyed by
//! `(seed, purpose, index)`, so inserting or removing draws in one place never
//! shifts the numbers seen anywhere else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    let key = splitmix(splitmix(seed ^ fnv1a(purpose)) ^ splitmix(index.wrapping_add(0x5851_F42D_4C95_7F2D)));
    ChaCha8Rng::seed_from_u64(key)
}

/// Derive a child seed, e.g. one per experiment cell.
pub fn child_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    stream(seed, purpose, index).random()
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Uniform draw from `0..n`; `n` must be positive.
pub fn index(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
