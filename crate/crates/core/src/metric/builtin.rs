//! A small, fully deterministic COMET-style metric.
//!
//! Encoder: position-modulated mean pooling of token embeddings followed by a
//! linear map and `tanh`. Head: a two-layer estimator over the feature vector
//! `[h; x; y; |h-x|; |h-y|; h*x; h*y]`.
//!
//! The head is evaluated in a regrouped but mathematically identical form.
//! For a fixed (source, reference) pair the terms that do not depend on the
//! hypothesis fold into a [`CaseContext`]:
//!
//! ```text
//! z = bias_ctx + mix_ctx * h + W4 |h - x| + W5 |h - y|
//! bias_ctx = b + Wx x + Wy y
//! mix_ctx  = Wh + W6 diag(x) + W7 diag(y)
//! ```
//!
//! Every scoring entry point goes through the same context code, so single,
//! batched and prepared scoring agree bit for bit.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendInfo, Embedding, MetricBackend, PreparedCases, Triple};
use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_HIDDEN: usize = 32;
const INIT_RANGE: f64 = 0.1;
const FEATURE_BLOCKS: usize = 7;

/// Frozen parameters of the builtin metric. All matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniMetricParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
    /// `vocab_size x dim`
    pub token_embeddings: Vec<f64>,
    /// `dim x dim`
    pub encoder_matrix: Vec<f64>,
    /// `hidden x 7*dim`
    pub head_hidden: Vec<f64>,
    pub head_hidden_bias: Vec<f64>,
    pub head_out: Vec<f64>,
    pub head_out_bias: f64,
    pub seed: u64,
}

impl MiniMetricParams {
    /// Draws every parameter uniformly from `[-0.1, 0.1]` with a ChaCha8
    /// stream seeded by `seed`, in declaration order.
    pub fn from_seed(seed: u64, vocab_size: usize, dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 || vocab_size == 0 {
            return Err(Error::Config(format!(
                "builtin metric needs positive sizes (vocab {vocab_size}, dim {dim}, hidden {hidden})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
                .collect()
        };
        let token_embeddings = draw(vocab_size * dim);
        let encoder_matrix = draw(dim * dim);
        let head_hidden = draw(hidden * FEATURE_BLOCKS * dim);
        let head_hidden_bias = draw(hidden);
        let head_out = draw(hidden);
        let head_out_bias = draw(1)[0];
        Ok(Self {
            vocab_size,
            dim,
            hidden,
            token_embeddings,
            encoder_matrix,
            head_hidden,
            head_hidden_bias,
            head_out,
            head_out_bias,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        let shapes = [
            (
                "token_embeddings",
                self.token_embeddings.len(),
                self.vocab_size * self.dim,
            ),
            (
                "encoder_matrix",
                self.encoder_matrix.len(),
                self.dim * self.dim,
            ),
            (
                "head_hidden",
                self.head_hidden.len(),
                self.hidden * FEATURE_BLOCKS * self.dim,
            ),
            ("head_hidden_bias", self.head_hidden_bias.len(), self.hidden),
            ("head_out", self.head_out.len(), self.hidden),
        ];
        for (name, actual, expected) in shapes {
            if actual != expected {
                return Err(Error::Config(format!(
                    "{name} has {actual} entries, expected {expected}"
                )));
            }
        }
        let all = self
            .token_embeddings
            .iter()
            .chain(&self.encoder_matrix)
            .chain(&self.head_hidden)
            .chain(&self.head_hidden_bias)
            .chain(&self.head_out)
            .chain(std::iter::once(&self.head_out_bias));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("builtin metric parameters".into()));
        }
        Ok(())
    }
}

/// Hypothesis-independent part of the head for one (source, reference) pair.
#[derive(Debug, Clone)]
pub(crate) struct CaseContext {
    bias: Vec<f64>,
    /// `dim x hidden`
    mix: Vec<f64>,
    src: Vec<f64>,
    reference: Vec<f64>,
}

pub struct BuiltinMetric {
    info: BackendInfo,
    vocab: Vocabulary,
    params: MiniMetricParams,
    /// Head blocks transposed to `dim x hidden`, indexed by feature block.
    blocks_t: [Vec<f64>; FEATURE_BLOCKS],
}

impl std::fmt::Debug for BuiltinMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinMetric")
            .field("info", &self.info)
            .finish()
    }
}

impl BuiltinMetric {
    pub fn new(vocab: Vocabulary, params: MiniMetricParams) -> Result<Self> {
        params.validate()?;
        if params.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "parameters cover {} tokens but the vocabulary has {}",
                params.vocab_size,
                vocab.len()
            )));
        }
        let (d, h) = (params.dim, params.hidden);
        let blocks_t = std::array::from_fn(|block| {
            let mut t = vec![0.0; d * h];
            for j in 0..h {
                let row = &params.head_hidden[j * FEATURE_BLOCKS * d + block * d..][..d];
                for (k, &w) in row.iter().enumerate() {
                    t[k * h + j] = w;
                }
            }
            t
        });
        let info = BackendInfo {
            name: format!("builtin(seed={},dim={},hidden={})", params.seed, d, h),
            dim: d,
            vocab_size: vocab.len(),
            supports_gradient: true,
            score_range: [0.0, 1.0],
        };
        Ok(Self {
            info,
            vocab,
            params,
            blocks_t,
        })
    }

    pub fn params(&self) -> &MiniMetricParams {
        &self.params
    }

    fn check_dims(&self, embs: &[&Embedding]) -> Result<()> {
        embs.iter().try_for_each(|e| e.expect_dim(self.params.dim))
    }

    pub(crate) fn context(&self, src: &[f64], reference: &[f64]) -> CaseContext {
        let (d, h) = (self.params.dim, self.params.hidden);
        let [w_hyp, w_src, w_ref, _, _, w_src_prod, w_ref_prod] = &self.blocks_t;
        let mut bias = self.params.head_hidden_bias.clone();
        let mut mix = vec![0.0; d * h];
        for k in 0..d {
            let (xk, yk) = (src[k], reference[k]);
            let row = k * h..(k + 1) * h;
            for (b, (ws, wr)) in bias
                .iter_mut()
                .zip(w_src[row.clone()].iter().zip(&w_ref[row.clone()]))
            {
                *b += ws * xk + wr * yk;
            }
            let parts = w_hyp[row.clone()]
                .iter()
                .zip(&w_src_prod[row.clone()])
                .zip(&w_ref_prod[row.clone()]);
            for (m, ((wh, wx), wy)) in mix[row].iter_mut().zip(parts) {
                *m = wh + wx * xk + wy * yk;
            }
        }
        CaseContext {
            bias,
            mix,
            src: src.to_vec(),
            reference: reference.to_vec(),
        }
    }

    /// Hidden pre-activations for `hyp` under `ctx`, written into `z`.
    fn preactivation(&self, ctx: &CaseContext, hyp: &[f64], z: &mut [f64]) {
        let h = self.params.hidden;
        let w_abs_src = &self.blocks_t[3];
        let w_abs_ref = &self.blocks_t[4];
        z.copy_from_slice(&ctx.bias);
        for (k, &hk) in hyp.iter().enumerate() {
            let a = (hk - ctx.src[k]).abs();
            let b = (hk - ctx.reference[k]).abs();
            let row = k * h..(k + 1) * h;
            let weights = ctx.mix[row.clone()]
                .iter()
                .zip(&w_abs_src[row.clone()])
                .zip(&w_abs_ref[row]);
            for (zj, ((m, wa), wb)) in z.iter_mut().zip(weights) {
                *zj += m * hk + wa * a + wb * b;
            }
        }
    }

    fn output(&self, z: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for (zj, o) in z.iter_mut().zip(&self.params.head_out) {
            *zj = zj.tanh();
            acc += o * *zj;
        }
        sigmoid(acc + self.params.head_out_bias)
    }

    pub(crate) fn score_in_context(&self, ctx: &CaseContext, hyp: &[f64], z: &mut [f64]) -> f64 {
        self.preactivation(ctx, hyp, z);
        self.output(z)
    }

    /// Score and its gradient with respect to `hyp`.
    pub(crate) fn score_and_grad_in_context(
        &self,
        ctx: &CaseContext,
        hyp: &[f64],
        z: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let h = self.params.hidden;
        let s = self.score_in_context(ctx, hyp, z);
        // z now holds tanh activations; turn it into d score / d pre-activation.
        let ds = s * (1.0 - s);
        for (t, o) in z.iter_mut().zip(&self.params.head_out) {
            *t = ds * o * (1.0 - *t * *t);
        }
        let w_abs_src = &self.blocks_t[3];
        let w_abs_ref = &self.blocks_t[4];
        for (k, &hk) in hyp.iter().enumerate() {
            let sa = sign(hk - ctx.src[k]);
            let sb = sign(hk - ctx.reference[k]);
            let row = k * h..(k + 1) * h;
            let weights = ctx.mix[row.clone()]
                .iter()
                .zip(&w_abs_src[row.clone()])
                .zip(&w_abs_ref[row]);
            let mut acc = 0.0;
            for (dz, ((m, wa), wb)) in z.iter().zip(weights) {
                acc += dz * (m + wa * sa + wb * sb);
            }
            grad[k] = acc;
        }
        s
    }

    fn contexts<'a>(&self, cases: &'a PreparedCases) -> std::borrow::Cow<'a, [CaseContext]> {
        match cases.state::<Vec<CaseContext>>() {
            Some(ctxs) if ctxs.len() == cases.len() => std::borrow::Cow::Borrowed(ctxs),
            _ => std::borrow::Cow::Owned(
                cases
                    .pairs()
                    .iter()
                    .map(|(x, y)| self.context(x.as_slice(), y.as_slice()))
                    .collect(),
            ),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Subgradient of `|t|` with `sign(0) = 0`.
fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MetricBackend for BuiltinMetric {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// `tanh(A * (1/L) * sum_i (1 + 0.1 sin i) E[t_i])` with 1-based positions.
    fn embed(&self, ids: &[TokenId]) -> Result<Embedding> {
        if ids.is_empty() {
            return Err(Error::Config("cannot embed an empty token sequence".into()));
        }
        let d = self.params.dim;
        let mut pooled = vec![0.0; d];
        for (i, &id) in ids.iter().enumerate() {
            self.vocab.check(id)?;
            let weight = 1.0 + 0.1 * ((i + 1) as f64).sin();
            let row = &self.params.token_embeddings[id as usize * d..][..d];
            for (p, e) in pooled.iter_mut().zip(row) {
                *p += weight * e;
            }
        }
        let len = ids.len() as f64;
        for p in &mut pooled {
            *p /= len;
        }
        let out = self
            .params
            .encoder_matrix
            .chunks_exact(d)
            .map(|row| {
                let mut acc = 0.0;
                for (a, p) in row.iter().zip(&pooled) {
                    acc += a * p;
                }
                acc.tanh()
            })
            .collect();
        Ok(Embedding::from_finite(out))
    }

    fn score_batch(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.params.hidden];
        triples
            .iter()
            .map(|t| {
                self.check_dims(&[t.src, t.hyp, t.reference])?;
                let ctx = self.context(t.src.as_slice(), t.reference.as_slice());
                Ok(self.score_in_context(&ctx, t.hyp.as_slice(), &mut z))
            })
            .collect()
    }

    fn grad(&self, src: &Embedding, hyp: &Embedding, reference: &Embedding) -> Result<Embedding> {
        self.check_dims(&[src, hyp, reference])?;
        let ctx = self.context(src.as_slice(), reference.as_slice());
        let mut z = vec![0.0; self.params.hidden];
        let mut grad = vec![0.0; self.params.dim];
        self.score_and_grad_in_context(&ctx, hyp.as_slice(), &mut z, &mut grad);
        Embedding::new(grad)
    }

    fn prepare(&self, pairs: Vec<(Embedding, Embedding)>) -> Result<PreparedCases> {
        for (x, y) in &pairs {
            self.check_dims(&[x, y])?;
        }
        let ctxs: Vec<CaseContext> = pairs
            .iter()
            .map(|(x, y)| self.context(x.as_slice(), y.as_slice()))
            .collect();
        Ok(PreparedCases::with_state(pairs, Arc::new(ctxs)))
    }

    fn total_score(&self, hyp: &Embedding, cases: &PreparedCases) -> Result<f64> {
        self.check_dims(&[hyp])?;
        let ctxs = self.contexts(cases);
        let mut z = vec![0.0; self.params.hidden];
        let mut total = 0.0;
        for ctx in ctxs.iter() {
            total += self.score_in_context(ctx, hyp.as_slice(), &mut z);
        }
        Ok(total)
    }

    fn total_score_and_grad(
        &self,
        hyp: &Embedding,
        cases: &PreparedCases,
    ) -> Result<(f64, Embedding)> {
        self.check_dims(&[hyp])?;
        let ctxs = self.contexts(cases);
        let mut z = vec![0.0; self.params.hidden];
        let mut case_grad = vec![0.0; self.params.dim];
        let mut grad = vec![0.0; self.params.dim];
        let mut total = 0.0;
        for ctx in ctxs.iter() {
            total += self.score_and_grad_in_context(ctx, hyp.as_slice(), &mut z, &mut case_grad);
            for (acc, g) in grad.iter_mut().zip(&case_grad) {
                *acc += g;
            }
        }
        Ok((total, Embedding::new(grad)?))
    }
}
