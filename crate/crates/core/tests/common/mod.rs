#![allow(dead_code)]

use awe::models::{EncDec, ModelConfig, ModelKind};
use awe::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect(),
    )
    .unwrap()
}

pub fn small_config(kind: ModelKind, dim: usize, hidden: usize, layers: usize, embed: usize) -> ModelConfig {
    ModelConfig {
        kind,
        input_dim: dim,
        hidden,
        enc_layers: layers,
        dec_layers: layers,
        embed_dim: embed,
    }
}

/// Every parameter, biases included, uniform on [-0.5, 0.5), so no gradient
/// is trivially zero.
pub fn random_model(cfg: ModelConfig, seed: u64) -> EncDec {
    let mut m = EncDec::zeros(cfg).unwrap();
    m.randomize(0.5, seed ^ 0x5eed);
    m
}
