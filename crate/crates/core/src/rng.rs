//! Seeded random streams. Every consumer derives its own ChaCha stream
//! from `(seed, stream id)` so that adding draws in one place never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Matrix;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const SHUFFLE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const LATENT: u64 = 3;
    pub const GENERATOR: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const TRIALS: u64 = 7;
    pub const SAMPLE: u64 = 8;
}

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Matrix of independent `N(0, sigma^2)` entries.
pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sigma * normal(rng))
}
