#![allow(dead_code)]

use hubtext_core::toy::toy_vocabulary;
use hubtext_core::{BuiltinMetric, Embedding, MiniMetricParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn builtin(seed: u64, vocab_size: usize, dim: usize, hidden: usize) -> BuiltinMetric {
    let vocab = toy_vocabulary(vocab_size, 0).unwrap();
    let params = MiniMetricParams::from_seed(seed, vocab_size, dim, hidden).unwrap();
    BuiltinMetric::new(vocab, params).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..=scale)).collect()
}

pub fn random_embedding(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Embedding {
    Embedding::new(random_vec(rng, dim, scale)).unwrap()
}
