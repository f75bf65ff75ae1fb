//! The optimised local search against a straight nested-loop transcription
//! of the replacement algorithm, plus the properties that follow from it.

mod common;

use hubtext_core::localsearch::{local_search, score_candidates_batch, Replacement};
use hubtext_core::metric::{BackendInfo, Triple};
use hubtext_core::toy::{toy_corpus, ToyConfig};
use hubtext_core::{
    BuiltinMetric, Dataset, Embedding, Error, MetricBackend, PreparedCases, SearchConfig, TokenId,
    TokenSequence, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    metric: BuiltinMetric,
    tune: Dataset,
    h0: TokenSequence,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = rng.random_range(6..=12);
    let corpus = toy_corpus(&ToyConfig {
        vocab_size,
        tune_pairs: rng.random_range(1..=3),
        test_pairs: 0,
        min_len: 1,
        max_len: 4,
        language: 0,
        seed,
    })
    .unwrap();
    let metric = common::builtin(seed + 100, vocab_size, 8, 16);
    let mut tune = corpus.tune_dataset();
    tune.cache_embeddings(&metric).unwrap();
    let len = rng.random_range(1..=4);
    let ids: Vec<TokenId> = (0..len)
        .map(|_| rng.random_range(4..vocab_size as TokenId))
        .collect();
    let h0 = metric.sequence(ids).unwrap();
    Instance { metric, tune, h0 }
}

/// Summed score, embedding every text from scratch and scoring case by case.
fn objective(metric: &BuiltinMetric, ids: &[TokenId], tune: &Dataset) -> f64 {
    let hyp = metric.embed(ids).unwrap();
    let mut total = 0.0;
    for case in &tune.cases {
        let x = metric.embed(&case.source.ids).unwrap();
        let y = metric.embed(&case.reference.ids).unwrap();
        total += metric.score(&x, &hyp, &y).unwrap();
    }
    total
}

struct OracleRun {
    best: Vec<TokenId>,
    best_score: f64,
    replacements: Vec<Replacement>,
    epochs: usize,
    converged: bool,
}

fn oracle(metric: &BuiltinMetric, h0: &[TokenId], tune: &Dataset, max_epochs: usize) -> OracleRun {
    let candidates: Vec<TokenId> = (4..metric.vocabulary().len() as TokenId).collect();
    let mut best = h0.to_vec();
    let mut best_score = objective(metric, &best, tune);
    let mut replacements = Vec::new();
    let mut epochs = 0;
    let mut converged = false;
    for epoch in 1..=max_epochs {
        let previous = best.clone();
        for i in 0..best.len() {
            for &v in &candidates {
                let mut h = best.clone();
                h[i] = v;
                let s = objective(metric, &h, tune);
                if s > best_score {
                    replacements.push(Replacement {
                        epoch,
                        position: i,
                        old_id: best[i],
                        new_id: v,
                        objective: s,
                    });
                    best = h;
                    best_score = s;
                }
            }
        }
        epochs = epoch;
        if best == previous {
            converged = true;
            break;
        }
    }
    OracleRun {
        best,
        best_score,
        replacements,
        epochs,
        converged,
    }
}

const INSTANCES: u64 = 24;

#[test]
fn engine_equals_nested_loop_oracle() {
    let start = std::time::Instant::now();
    let cfg = SearchConfig::default();
    let mut converged = 0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let got = local_search(&inst.h0, &inst.tune, &inst.metric, &cfg).unwrap();
        let want = oracle(&inst.metric, &inst.h0.ids, &inst.tune, cfg.max_epochs);
        assert_eq!(got.best.ids, want.best, "seed {seed}");
        assert_eq!(
            got.best.surface,
            inst.metric.vocabulary().detokenize(&want.best).unwrap()
        );
        assert_eq!(
            got.objective.to_bits(),
            want.best_score.to_bits(),
            "seed {seed}"
        );
        assert_eq!(got.trace.replacements, want.replacements, "seed {seed}");
        assert_eq!(got.trace.epochs, want.epochs);
        assert_eq!(got.trace.converged, want.converged);
        assert_eq!(
            got.trace.initial_objective.to_bits(),
            objective(&inst.metric, &inst.h0.ids, &inst.tune).to_bits()
        );
        converged += usize::from(want.converged);
    }
    assert!(converged > 0);
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn converged_runs_are_one_swap_optimal() {
    let cfg = SearchConfig::default();
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let out = local_search(&inst.h0, &inst.tune, &inst.metric, &cfg).unwrap();
        if !out.trace.converged {
            continue;
        }
        let best = objective(&inst.metric, &out.best.ids, &inst.tune);
        for i in 0..out.best.len() {
            for v in 4..inst.metric.vocabulary().len() as TokenId {
                let mut h = out.best.ids.clone();
                h[i] = v;
                let s = objective(&inst.metric, &h, &inst.tune);
                assert!(
                    s <= best,
                    "seed {seed}: swap {i}->{v} improves {best} to {s}"
                );
            }
        }
    }
}

#[test]
fn traces_increase_strictly_and_count_candidates() {
    let cfg = SearchConfig::default();
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let out = local_search(&inst.h0, &inst.tune, &inst.metric, &cfg).unwrap();
        let mut last = out.trace.initial_objective;
        for r in &out.trace.replacements {
            assert!(r.objective > last, "seed {seed}: {} !> {last}", r.objective);
            last = r.objective;
        }
        assert_eq!(last, out.objective);
        assert!(out.objective >= out.trace.initial_objective);
        let candidates = inst.metric.vocabulary().len() as u64 - 4;
        assert_eq!(
            out.trace.total_candidates_scored,
            out.trace.epochs as u64 * out.best.len() as u64 * candidates
        );
    }
}

#[test]
fn vocab_limit_restricts_candidates() {
    let inst = instance(3);
    let cfg = SearchConfig {
        vocab_limit: Some(2),
        ..Default::default()
    };
    let out = local_search(&inst.h0, &inst.tune, &inst.metric, &cfg).unwrap();
    for r in &out.trace.replacements {
        assert!(r.new_id == 4 || r.new_id == 5, "{r:?}");
    }
    assert_eq!(
        out.trace.total_candidates_scored,
        out.trace.epochs as u64 * out.best.len() as u64 * 2
    );
}

#[test]
fn result_does_not_depend_on_threads_or_chunking() {
    let inst = instance(7);
    let run = |threads: usize, chunk_size: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let cfg = SearchConfig {
            chunk_size,
            ..Default::default()
        };
        pool.install(|| local_search(&inst.h0, &inst.tune, &inst.metric, &cfg).unwrap())
    };
    let base = run(1, 512);
    for (threads, chunk) in [(1, 1), (4, 512), (4, 3), (8, 2)] {
        let other = run(threads, chunk);
        assert_eq!(other.best, base.best);
        assert_eq!(other.trace, base.trace);
        assert_eq!(other.objective.to_bits(), base.objective.to_bits());
    }
}

#[test]
fn batch_scores_equal_individual_objectives() {
    let inst = instance(11);
    let prepared = PreparedCases::from_dataset(&inst.tune, &inst.metric).unwrap();
    let candidates: Vec<TokenId> = (4..inst.metric.vocabulary().len() as TokenId).collect();
    let position = inst.h0.len() - 1;
    let scores = score_candidates_batch(
        &inst.h0.ids,
        position,
        &candidates,
        &prepared,
        &inst.metric,
        2,
    )
    .unwrap();
    for (&v, s) in candidates.iter().zip(&scores) {
        let mut h = inst.h0.ids.clone();
        h[position] = v;
        assert_eq!(
            s.to_bits(),
            objective(&inst.metric, &h, &inst.tune).to_bits()
        );
    }
}

/// Delegates to the builtin metric but refuses to embed one token.
struct Poisoned {
    inner: BuiltinMetric,
    bad: TokenId,
}

impl MetricBackend for Poisoned {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }
    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }
    fn embed(&self, ids: &[TokenId]) -> hubtext_core::Result<Embedding> {
        if ids.contains(&self.bad) {
            return Err(Error::Protocol("poisoned token".into()));
        }
        self.inner.embed(ids)
    }
    fn score_batch(&self, triples: &[Triple<'_>]) -> hubtext_core::Result<Vec<f64>> {
        self.inner.score_batch(triples)
    }
    fn grad(
        &self,
        src: &Embedding,
        hyp: &Embedding,
        reference: &Embedding,
    ) -> hubtext_core::Result<Embedding> {
        self.inner.grad(src, hyp, reference)
    }
}

#[test]
fn backend_failure_names_candidate_and_position() {
    let inst = instance(2);
    let candidates: Vec<TokenId> = (4..inst.metric.vocabulary().len() as TokenId).collect();
    let bad = *candidates.last().unwrap();
    let backend = Poisoned {
        inner: inst.metric,
        bad,
    };
    let prepared = PreparedCases::from_dataset(&inst.tune, &backend).unwrap();
    let base = vec![4, 4];
    let err = score_candidates_batch(&base, 1, &candidates, &prepared, &backend, 1).unwrap_err();
    let msg = err.to_string();
    let expected = format!(
        "candidate {} (token {bad}) at position 1",
        candidates.len() - 1
    );
    assert!(msg.contains(&expected), "{msg}");
    assert!(matches!(err.root(), Error::Protocol(_)));
}
