//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajgpt::numerics::{Matrix, Scalar};
use trajgpt::positional::RopeConfig;
use trajgpt::sra::{GateMode, SraParams, DEFAULT_TAU};

pub fn random_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    let data = (0..rows * cols).map(|_| T::of(rng.random_range(-scale..scale))).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random SRA module of width `d`; decay vectors are large enough that the
/// gates spread over a useful range.
pub fn random_params<T: Scalar>(seed: u64, d: usize, heads: usize, rope: bool) -> SraParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (d as f64).sqrt();
    SraParams {
        w_q: random_matrix(&mut rng, d, d, s),
        w_k: random_matrix(&mut rng, d, d, s),
        w_v: random_matrix(&mut rng, d, d, s),
        w_o: random_matrix(&mut rng, d, d, s),
        w_gamma: random_matrix(&mut rng, heads, d, 3.0),
        tau: DEFAULT_TAU,
        heads,
        rope: rope.then(|| RopeConfig::new(d / heads)),
        gate: GateMode::Data,
    }
}

/// Increasing ages with gaps in `[0, 2)` years, ties allowed.
pub fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = rng.random_range(20.0..60.0);
    (0..n)
        .map(|_| {
            t += rng.random_range(0.0..2.0);
            t
        })
        .collect()
}
