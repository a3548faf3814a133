//! Seeded fixtures shared by the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ternacc::codec::TritTensor;
use ternacc::tensor::QTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_activations(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> QTensor {
    QTensor::from_ints(rows, cols, (0..rows * cols).map(|_| rng.random::<i8>()).collect()).expect("non-empty shape")
}

pub fn random_ternary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TritTensor {
    let v: Vec<i8> = (0..rows * cols).map(|_| rng.random_range(-1..=1)).collect();
    TritTensor::from_i8(rows, cols, &v).expect("non-empty shape")
}

pub fn random_scores(rng: &mut ChaCha8Rng, len: usize) -> Vec<i64> {
    (0..len).map(|_| rng.random_range(-1 << 20..1 << 20)).collect()
}
