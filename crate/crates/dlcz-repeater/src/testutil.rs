//! Shared helpers for the in-crate unit tests: deterministic seeded RNG and
//! small random matrix generators.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mat::{dagger, hermitize};

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Real-valued complex constant.
#[allow(non_snake_case)]
pub fn C(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random point in phase space, entries in the unit-ish disc.
pub fn rand_point(r: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| c(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5)).collect()
}

/// Random Hermitian matrix with O(1) entries.
pub fn rand_hermitian(r: &mut ChaCha8Rng, n: usize) -> Array2<C64> {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = c(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5);
        }
    }
    hermitize(&m)
}

/// Random Hermitian positive-definite matrix, comfortably conditioned.
pub fn rand_hpd(r: &mut ChaCha8Rng, n: usize) -> Array2<C64> {
    let b = rand_hermitian(r, n);
    let mut m = b.dot(&dagger(&b));
    for i in 0..n {
        m[(i, i)] += C(0.5 + r.gen::<f64>());
    }
    m
}
