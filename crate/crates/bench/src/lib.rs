//! Shared fixtures for the criterion benches.

use hubtext_core::corpus::NUM_SPECIAL;
use hubtext_core::toy::{toy_corpus, ToyConfig};
use hubtext_core::{
    BuiltinMetric, Dataset, MetricBackend, MiniMetricParams, PreparedCases, TokenId, TokenSequence,
};

pub struct Fixture {
    pub metric: BuiltinMetric,
    pub tune: Dataset,
    pub prepared: PreparedCases,
    pub hub: TokenSequence,
    pub candidates: Vec<TokenId>,
}

/// Toy corpus of `tune_pairs` cases over `candidates + 4` tokens, a builtin
/// metric of width `dim`, and a hub text of `hub_len` tokens that cycles
/// through the vocabulary.
pub fn fixture(candidates: usize, tune_pairs: usize, hub_len: usize, dim: usize) -> Fixture {
    let vocab_size = candidates + NUM_SPECIAL;
    let corpus = toy_corpus(&ToyConfig {
        vocab_size,
        tune_pairs,
        test_pairs: 0,
        ..Default::default()
    })
    .expect("toy corpus");
    let params = MiniMetricParams::from_seed(0, vocab_size, dim, 32).expect("metric parameters");
    let metric = BuiltinMetric::new(corpus.vocab.clone(), params).expect("builtin metric");
    let mut tune = corpus.tune_dataset();
    tune.cache_embeddings(&metric).expect("embeddings");
    let prepared = PreparedCases::from_dataset(&tune, &metric).expect("prepared cases");
    let ids = (0..hub_len)
        .map(|i| (NUM_SPECIAL + (i * 7) % candidates) as TokenId)
        .collect();
    let hub = metric.sequence(ids).expect("hub text");
    let candidates = (NUM_SPECIAL..vocab_size).map(|t| t as TokenId).collect();
    Fixture {
        metric,
        tune,
        prepared,
        hub,
        candidates,
    }
}
