#![allow(dead_code)]

use sfdm_core::ndtensor::Tensor;

/// Deterministic values in [-1, 1).
pub fn lcg_vec(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

pub fn t64(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, lcg_vec(seed, n)).unwrap()
}
