//! Helpers shared by the integration test binaries.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn random_matrix(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0))
}

pub fn gaussian_matrix(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((n, m), |_| normal.sample(&mut rng))
}

/// Synthetic stand-in for a small unbalanced tabular dataset: `sizes[c]`
/// points drawn around a random center per class, plus the class labels.
pub fn clustered_dataset(
    sizes: &[usize],
    m: usize,
    spread: f64,
    seed: u64,
) -> (Array2<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = sizes.iter().sum();
    let centers: Vec<Vec<f64>> = (0..sizes.len())
        .map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).unwrap();
    let mut x = Array2::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for j in 0..m {
                x[[row, j]] = centers[c][j] + noise.sample(&mut rng);
            }
            labels.push(c as i64);
            row += 1;
        }
    }
    (x, labels)
}

/// Run a criterion body and print one PASS/FAIL line for it.
pub fn criterion(id: usize, desc: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("criterion {id} PASS: {desc} [{detail}]"),
        Err(msg) => {
            println!("criterion {id} FAIL: {desc} [{msg}]");
            panic!("criterion {id} failed: {msg}");
        }
    }
}
