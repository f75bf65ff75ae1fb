//! Step two: decode a hub embedding into concrete token sequences and pick
//! the one that scores best on the tuning data.
//!
//! Decoding is a search-based approximate inverse of the encoder. A
//! stochastic beam grows prefixes left to right; every extension is ranked by
//! the Euclidean distance of its embedding to the target and next beams are
//! sampled from `softmax(-distance / temperature)`. Each length step emits the
//! closest extension plus every sampled beam as a hypothesis. Rounds repeat
//! with the same random stream until enough unique hypotheses exist.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::metric::{Embedding, MetricBackend, PreparedCases};

const EMBED_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverterConfig {
    pub num_hypotheses: usize,
    pub beam_width: usize,
    pub max_length: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for InverterConfig {
    fn default() -> Self {
        Self {
            num_hypotheses: 1024,
            beam_width: 8,
            max_length: 24,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl InverterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_hypotheses == 0
            || self.beam_width == 0
            || self.max_length == 0
            || !(self.temperature > 0.0 && self.temperature.is_finite())
        {
            return Err(Error::Config(format!("invalid inverter config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub hypotheses: Vec<TokenSequence>,
    /// `||f(h) - target||_2` for each hypothesis.
    pub distances: Vec<f64>,
    /// Set when the search ran dry before reaching `num_hypotheses`.
    pub truncated: bool,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

struct Collector<'a> {
    backend: &'a dyn MetricBackend,
    limit: usize,
    seen: HashSet<Vec<TokenId>>,
    hypotheses: Vec<TokenSequence>,
    distances: Vec<f64>,
}

impl Collector<'_> {
    fn full(&self) -> bool {
        self.hypotheses.len() >= self.limit
    }

    /// Returns whether the sequence was new.
    fn push(&mut self, ids: &[TokenId], distance: f64) -> Result<bool> {
        if self.full() || self.seen.contains(ids) {
            return Ok(false);
        }
        self.seen.insert(ids.to_vec());
        self.hypotheses.push(self.backend.sequence(ids.to_vec())?);
        self.distances.push(distance);
        Ok(true)
    }
}

pub fn invert_embedding(
    target: &Embedding,
    backend: &dyn MetricBackend,
    cfg: &InverterConfig,
) -> Result<HypothesisSet> {
    cfg.validate()?;
    target.expect_dim(backend.info().dim)?;
    let vocab = backend.vocabulary();
    let tokens = vocab.searchable_ids(None);
    if tokens.is_empty() {
        return Err(Error::Config("vocabulary has no searchable tokens".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Collector {
        backend,
        limit: cfg.num_hypotheses,
        seen: HashSet::new(),
        hypotheses: Vec::new(),
        distances: Vec::new(),
    };
    let per_round = cfg.beam_width * cfg.max_length + cfg.max_length;
    let max_rounds = 8 + 4 * cfg.num_hypotheses.div_ceil(per_round);
    let mut truncated = false;

    for round in 0.. {
        if out.full() {
            break;
        }
        if round == max_rounds {
            truncated = true;
            break;
        }
        let mut added = 0usize;
        let mut beams: Vec<Vec<TokenId>> = vec![Vec::new()];
        for _ in 0..cfg.max_length {
            let extensions: Vec<Vec<TokenId>> = beams
                .iter()
                .flat_map(|prefix| {
                    tokens.iter().map(move |&t| {
                        let mut ext = prefix.clone();
                        ext.push(t);
                        ext
                    })
                })
                .collect();
            let distances = distances_to(target, &extensions, backend)?;

            let closest = argmin(&distances, |_| true).expect("extensions are non-empty");
            added += out.push(&extensions[closest], distances[closest])? as usize;

            let chosen = sample_without_replacement(&distances, cfg, &mut rng);
            for &i in &chosen {
                added += out.push(&extensions[i], distances[i])? as usize;
            }
            if out.full() {
                break;
            }
            beams = chosen.into_iter().map(|i| extensions[i].clone()).collect();
        }
        if added == 0 && !out.full() {
            truncated = true;
            break;
        }
    }
    if truncated {
        log::warn!(
            "inversion produced {} unique hypotheses, fewer than the requested {}",
            out.hypotheses.len(),
            cfg.num_hypotheses
        );
    }
    Ok(HypothesisSet {
        hypotheses: out.hypotheses,
        distances: out.distances,
        truncated,
    })
}

fn distances_to(
    target: &Embedding,
    seqs: &[Vec<TokenId>],
    backend: &dyn MetricBackend,
) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = seqs
        .par_chunks(EMBED_CHUNK)
        .map(|chunk| {
            let embs = backend.embed_batch(chunk)?;
            Ok(embs.iter().map(|e| e.distance(target)).collect())
        })
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = chunks.into_iter().flatten().collect();
    if let Some(i) = distances.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("distance of extension {i}")));
    }
    Ok(distances)
}

/// Index of the smallest value among entries accepted by `keep`; lowest index wins ties.
fn argmin(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if keep(i) && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Draws up to `beam_width` distinct indices with probability proportional to
/// `exp(-(d - d_min) / temperature)`. When every remaining weight underflows to
/// zero the closest remaining index is taken instead.
fn sample_without_replacement(
    distances: &[f64],
    cfg: &InverterConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = distances
        .iter()
        .map(|d| (-(d - d_min) / cfg.temperature).exp())
        .collect();
    let mut picked = vec![false; distances.len()];
    let mut chosen = Vec::with_capacity(cfg.beam_width);
    while chosen.len() < cfg.beam_width.min(distances.len()) {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let r = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                cumulative += w;
                pick = Some(i);
                if cumulative > r {
                    break;
                }
            }
            pick
        } else {
            argmin(distances, |i| !picked[i])
        };
        let Some(i) = pick else { break };
        picked[i] = true;
        weights[i] = 0.0;
        chosen.push(i);
    }
    chosen
}

/// Summed tuning score of every hypothesis, in hypothesis order.
pub fn score_hypotheses(
    hyps: &[TokenSequence],
    tune: &Dataset,
    backend: &dyn MetricBackend,
) -> Result<Vec<f64>> {
    let prepared = PreparedCases::from_dataset(tune, backend)?;
    hyps.par_iter()
        .map(|h| backend.total_score(&backend.embed(&h.ids)?, &prepared))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub hypothesis: TokenSequence,
    pub total_score: f64,
    /// Summed tuning score of every hypothesis in the set.
    pub totals: Vec<f64>,
}

/// Picks the hypothesis with the highest summed tuning score; the lowest index wins ties.
pub fn select_best(
    hyps: &HypothesisSet,
    tune: &Dataset,
    backend: &dyn MetricBackend,
) -> Result<Selection> {
    if hyps.is_empty() {
        return Err(Error::Config("hypothesis set is empty".into()));
    }
    if tune.is_empty() {
        return Err(Error::Config("tuning set is empty".into()));
    }
    let totals = score_hypotheses(&hyps.hypotheses, tune, backend)?;
    let mut index = 0;
    for (i, &t) in totals.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("tuning score of hypothesis {i}")));
        }
        if t > totals[index] {
            index = i;
        }
    }
    Ok(Selection {
        index,
        hypothesis: hyps.hypotheses[index].clone(),
        total_score: totals[index],
        totals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub ids: Vec<TokenId>,
    pub surface: String,
    pub distance: f64,
    pub tune_score_mean: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Writes one JSON object per hypothesis.
pub fn write_hypothesis_dump(
    path: impl AsRef<Path>,
    hyps: &HypothesisSet,
    totals: &[f64],
    tune_size: usize,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ((h, &distance), &total) in hyps.hypotheses.iter().zip(&hyps.distances).zip(totals) {
        let record = HypothesisRecord {
            ids: h.ids.clone(),
            surface: h.surface.clone(),
            distance,
            tune_score_mean: total / tune_size as f64,
            seed,
            config_hash: config_hash.to_string(),
        };
        serde_json::to_writer(&mut buf, &record)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
