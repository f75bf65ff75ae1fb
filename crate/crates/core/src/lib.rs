//! Search for a single "hub" text that an embedding-based evaluation metric
//! scores highly regardless of the source and reference it is paired with.
//!
//! The search has three steps, each in its own module:
//!
//! 1. [`hubtrain`] ascends the mean metric score in embedding space.
//! 2. [`inverter`] decodes that embedding into candidate texts and keeps the
//!    best scoring one.
//! 3. [`localsearch`] greedily replaces tokens of that text while the summed
//!    tuning score strictly improves.
//!
//! [`report`] evaluates the resulting text. Metrics are reached through the
//! [`MetricBackend`] trait, either in process ([`BuiltinMetric`]) or over
//! HTTP ([`RemoteBackend`]).

pub mod corpus;
pub mod error;
pub mod hubtrain;
pub mod inverter;
pub mod localsearch;
pub mod metric;
pub mod report;
pub mod toy;

pub use corpus::{
    load_hypotheses, BaselineHypothesis, Dataset, EvalCase, TokenId, TokenSequence, Vocabulary,
};
pub use error::{Error, Result};
pub use hubtrain::{train_hub, HubCheckpoint, HubTrainState, OptimizerConfig};
pub use inverter::{invert_embedding, select_best, HypothesisSet, InverterConfig, Selection};
pub use localsearch::{
    local_search, score_candidates_batch, SearchConfig, SearchOutcome, SearchResult, SearchTrace,
};
pub use metric::{
    backend_from_spec, chrf, BackendInfo, BuiltinMetric, Embedding, LoopbackServer, MetricBackend,
    MiniMetricParams, PreparedCases, RemoteBackend,
};
pub use report::{BoxStats, Provenance, SearchReport};

/// Derives the seed of a named random substream from the root seed.
///
/// Each stochastic step draws from its own stream (`"invert"`, `"search"`,
/// ...) so that running a step alone reproduces its part of the pipeline.
pub fn substream_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then one SplitMix64 round to mix in the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
