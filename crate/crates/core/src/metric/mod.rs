//! The metric-backend contract and its implementations.
//!
//! A backend scores a hypothesis embedding against a (source, reference)
//! embedding pair. The search modules only talk to [`MetricBackend`], so the
//! in-process [`BuiltinMetric`] and the HTTP [`RemoteBackend`] are
//! interchangeable.

mod builtin;
mod chrf;
mod loopback;
mod remote;

use std::any::Any;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use builtin::{BuiltinMetric, MiniMetricParams, DEFAULT_DIM, DEFAULT_HIDDEN};
pub use chrf::{chrf, CHRF_BETA, CHRF_MAX_ORDER};
pub use loopback::LoopbackServer;
pub use remote::{RemoteBackend, PROTOCOL_VERSION};

use crate::corpus::{Dataset, EvalCase, TokenId, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

/// A point in a backend's sentence-embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub(crate) Vec<f64>);

impl Embedding {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding component {i} is {}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub dim: usize,
    pub vocab_size: usize,
    pub supports_gradient: bool,
    pub score_range: [f64; 2],
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Protocol("backend reports dim = 0".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Protocol(
                "backend reports an empty vocabulary".into(),
            ));
        }
        let [lo, hi] = self.score_range;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Protocol(format!("invalid score range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// One scoring request: the hypothesis embedding between its source and reference.
#[derive(Debug, Clone, Copy)]
pub struct Triple<'a> {
    pub src: &'a Embedding,
    pub hyp: &'a Embedding,
    pub reference: &'a Embedding,
}

/// Tuning cases in a form a backend can score many hypotheses against.
///
/// `state` holds whatever per-case precomputation the producing backend
/// wants to keep; other backends ignore it.
#[derive(Clone)]
pub struct PreparedCases {
    pairs: Vec<(Embedding, Embedding)>,
    state: Option<Arc<dyn Any + Send + Sync>>,
}

impl std::fmt::Debug for PreparedCases {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedCases")
            .field("len", &self.pairs.len())
            .field("has_state", &self.state.is_some())
            .finish()
    }
}

impl PreparedCases {
    pub fn plain(pairs: Vec<(Embedding, Embedding)>) -> Self {
        Self { pairs, state: None }
    }

    pub fn with_state(
        pairs: Vec<(Embedding, Embedding)>,
        state: Arc<dyn Any + Send + Sync>,
    ) -> Self {
        Self {
            pairs,
            state: Some(state),
        }
    }

    /// Prepares a dataset's cached embeddings for `backend`.
    pub fn from_dataset(data: &Dataset, backend: &dyn MetricBackend) -> Result<Self> {
        let pairs = data
            .cases
            .iter()
            .enumerate()
            .map(
                |(i, c)| match (&c.source_embedding, &c.reference_embedding) {
                    (Some(x), Some(y)) => Ok((x.clone(), y.clone())),
                    _ => Err(Error::Config(format!(
                        "case {i} of dataset `{}` has no cached embeddings",
                        data.name
                    ))),
                },
            )
            .collect::<Result<Vec<_>>>()?;
        backend.prepare(pairs)
    }

    pub fn pairs(&self) -> &[(Embedding, Embedding)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn state<T: Any + Send + Sync>(&self) -> Option<&T> {
        self.state.as_deref().and_then(|s| s.downcast_ref::<T>())
    }
}

/// The scoring oracle.
///
/// Implementations must be callable from many threads at once and must not
/// mutate observable state. Summed objectives are always accumulated left to
/// right in case order, starting from `0.0`.
pub trait MetricBackend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn vocabulary(&self) -> &Vocabulary;

    fn embed(&self, ids: &[TokenId]) -> Result<Embedding>;

    fn embed_batch(&self, batch: &[Vec<TokenId>]) -> Result<Vec<Embedding>> {
        batch.iter().map(|ids| self.embed(ids)).collect()
    }

    fn score_batch(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>>;

    fn score(&self, src: &Embedding, hyp: &Embedding, reference: &Embedding) -> Result<f64> {
        let out = self.score_batch(&[Triple {
            src,
            hyp,
            reference,
        }])?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::Protocol("empty score batch response".into()))
    }

    /// Gradient of the score with respect to the hypothesis embedding.
    fn grad(&self, src: &Embedding, hyp: &Embedding, reference: &Embedding) -> Result<Embedding>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        self.vocabulary().detokenize(ids)
    }

    fn prepare(&self, pairs: Vec<(Embedding, Embedding)>) -> Result<PreparedCases> {
        Ok(PreparedCases::plain(pairs))
    }

    /// Summed score of one hypothesis over all prepared cases.
    fn total_score(&self, hyp: &Embedding, cases: &PreparedCases) -> Result<f64> {
        let triples: Vec<Triple<'_>> = cases
            .pairs()
            .iter()
            .map(|(src, reference)| Triple {
                src,
                hyp,
                reference,
            })
            .collect();
        let scores = self.score_batch(&triples)?;
        Ok(scores.iter().fold(0.0, |acc, s| acc + s))
    }

    /// [`MetricBackend::total_score`] for several hypotheses, in order.
    fn total_scores(&self, hyps: &[Embedding], cases: &PreparedCases) -> Result<Vec<f64>> {
        hyps.iter().map(|h| self.total_score(h, cases)).collect()
    }

    /// Summed score and summed gradient over all prepared cases.
    fn total_score_and_grad(
        &self,
        hyp: &Embedding,
        cases: &PreparedCases,
    ) -> Result<(f64, Embedding)> {
        let total = self.total_score(hyp, cases)?;
        let mut grad = vec![0.0; hyp.dim()];
        for (src, reference) in cases.pairs() {
            let g = self.grad(src, hyp, reference)?;
            g.expect_dim(hyp.dim())?;
            for (acc, v) in grad.iter_mut().zip(g.as_slice()) {
                *acc += v;
            }
        }
        Ok((total, Embedding::new(grad)?))
    }

    fn sequence(&self, ids: Vec<TokenId>) -> Result<TokenSequence> {
        if ids.is_empty() {
            return Err(Error::Config("token sequence must not be empty".into()));
        }
        let surface = self.detokenize(&ids)?;
        Ok(TokenSequence { ids, surface })
    }
}

/// Score of hypothesis `h` on one case, using cached case embeddings when present.
pub fn score_hypothesis(
    h: &TokenSequence,
    case: &EvalCase,
    backend: &dyn MetricBackend,
) -> Result<f64> {
    let src = match &case.source_embedding {
        Some(e) => e.clone(),
        None => backend.embed(&case.source.ids)?,
    };
    let reference = match &case.reference_embedding {
        Some(e) => e.clone(),
        None => backend.embed(&case.reference.ids)?,
    };
    let hyp = backend.embed(&h.ids)?;
    backend.score(&src, &hyp, &reference)
}

/// Parses a backend spec: `builtin:SEED:DIM[:HIDDEN]` or `remote:URL`.
pub fn backend_from_spec(spec: &str, vocab: Option<Vocabulary>) -> Result<Arc<dyn MetricBackend>> {
    if let Some(rest) = spec.strip_prefix("builtin:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.parse().map_err(|_| {
                Error::Config(format!("invalid {what} `{s}` in backend spec `{spec}`"))
            })
        };
        let (seed, dim, hidden) = match parts.as_slice() {
            [seed] => (parse(seed, "seed")?, DEFAULT_DIM, DEFAULT_HIDDEN),
            [seed, dim] => (
                parse(seed, "seed")?,
                parse(dim, "dim")? as usize,
                DEFAULT_HIDDEN,
            ),
            [seed, dim, hidden] => (
                parse(seed, "seed")?,
                parse(dim, "dim")? as usize,
                parse(hidden, "hidden size")? as usize,
            ),
            _ => return Err(Error::Config(format!("malformed backend spec `{spec}`"))),
        };
        let vocab = vocab
            .ok_or_else(|| Error::Config("the builtin backend needs a vocabulary file".into()))?;
        let params = MiniMetricParams::from_seed(seed, vocab.len(), dim, hidden)?;
        Ok(Arc::new(BuiltinMetric::new(vocab, params)?))
    } else if let Some(url) = spec.strip_prefix("remote:") {
        Ok(Arc::new(RemoteBackend::connect(url)?))
    } else {
        Err(Error::Config(format!(
            "unknown backend spec `{spec}` (expected builtin:SEED:DIM or remote:URL)"
        )))
    }
}
