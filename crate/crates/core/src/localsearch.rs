//! Step three: per-position token replacement over the whole vocabulary.
//!
//! For each epoch, each position `i` of the incumbent `h_best` and each
//! candidate token `v`, the text with position `i` set to `v` is scored on
//! the tuning set and accepted immediately when its summed score is strictly
//! greater than the best so far. The search stops after an epoch that
//! changed nothing, or after `max_epochs`.
//!
//! Candidate scores for one position are computed in parallel chunks. They
//! do not depend on which candidate was accepted earlier at the same
//! position, since every candidate overwrites that position. A serial scan in
//! candidate order then applies the acceptances, so the result is identical
//! to the nested-loop formulation for any thread count.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::metric::{MetricBackend, PreparedCases};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Restrict candidates to the first `k` non-special token ids.
    pub vocab_limit: Option<usize>,
    pub max_epochs: usize,
    /// Upper bound on candidates per scoring batch.
    pub chunk_size: usize,
    pub record_trace: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            vocab_limit: None,
            max_epochs: 50,
            chunk_size: 512,
            record_trace: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.max_epochs == 0 || self.vocab_limit == Some(0) {
            return Err(Error::Config(format!("invalid search config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub epoch: usize,
    pub position: usize,
    pub old_id: TokenId,
    pub new_id: TokenId,
    /// Summed tuning score right after this replacement.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Summed tuning score of the initial text.
    pub initial_objective: f64,
    pub replacements: Vec<Replacement>,
    pub epochs: usize,
    pub total_candidates_scored: u64,
    /// True when the last epoch changed nothing (as opposed to hitting `max_epochs`).
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: TokenSequence,
    /// Summed tuning score of `best`.
    pub objective: f64,
    pub trace: SearchTrace,
}

/// Summed tuning score of `base` with `position` replaced by each candidate,
/// in candidate order.
///
/// Candidates are split into chunks of at most `chunk_size`; each chunk is
/// embedded as one batch and scored against every prepared case.
pub fn score_candidates_batch(
    base: &[TokenId],
    position: usize,
    candidates: &[TokenId],
    tune: &PreparedCases,
    backend: &dyn MetricBackend,
    chunk_size: usize,
) -> Result<Vec<f64>> {
    if position >= base.len() {
        return Err(Error::Config(format!(
            "position {position} outside text of length {}",
            base.len()
        )));
    }
    let workers = rayon::current_num_threads().max(1);
    let chunk = chunk_size
        .min(candidates.len().div_ceil(4 * workers))
        .max(1);
    let scored: Vec<Vec<f64>> = candidates
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, group)| {
            let seqs: Vec<Vec<TokenId>> = group
                .iter()
                .map(|&v| {
                    let mut ids = base.to_vec();
                    ids[position] = v;
                    ids
                })
                .collect();
            let at = |e: Error, k: usize| {
                e.context(format!(
                    "candidate {} (token {}) at position {position}",
                    c * chunk + k,
                    group[k]
                ))
            };
            let embs = backend.embed_batch(&seqs).map_err(|e| at(e, 0))?;
            let totals = backend.total_scores(&embs, tune).map_err(|e| at(e, 0))?;
            for (k, s) in totals.iter().enumerate() {
                if !s.is_finite() {
                    return Err(at(Error::NonFinite(format!("score {s}")), k));
                }
            }
            Ok(totals)
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

/// Runs the replacement search from `h0`. `tune` must have cached embeddings.
pub fn local_search(
    h0: &TokenSequence,
    tune: &Dataset,
    backend: &dyn MetricBackend,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if h0.is_empty() {
        return Err(Error::Config("initial hub text is empty".into()));
    }
    let vocab = backend.vocabulary();
    for &id in &h0.ids {
        vocab.check(id)?;
    }
    let candidates = vocab.searchable_ids(cfg.vocab_limit);
    if candidates.is_empty() {
        return Err(Error::Config("no candidate tokens to search over".into()));
    }
    let prepared = PreparedCases::from_dataset(tune, backend)?;

    let mut best = h0.ids.clone();
    let initial_objective = backend.total_score(&backend.embed(&best)?, &prepared)?;
    if !initial_objective.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective of the initial text is {initial_objective}"
        )));
    }
    let mut best_score = initial_objective;
    let mut trace = SearchTrace {
        initial_objective,
        replacements: Vec::new(),
        epochs: 0,
        total_candidates_scored: 0,
        converged: false,
    };

    for epoch in 1..=cfg.max_epochs {
        let previous = best.clone();
        for position in 0..best.len() {
            let scores = score_candidates_batch(
                &best,
                position,
                &candidates,
                &prepared,
                backend,
                cfg.chunk_size,
            )?;
            trace.total_candidates_scored += scores.len() as u64;
            for (&token, &score) in candidates.iter().zip(&scores) {
                if score > best_score {
                    let old_id = best[position];
                    best[position] = token;
                    best_score = score;
                    if cfg.record_trace {
                        trace.replacements.push(Replacement {
                            epoch,
                            position,
                            old_id,
                            new_id: token,
                            objective: score,
                        });
                    }
                }
            }
        }
        trace.epochs = epoch;
        log::debug!("local search epoch {epoch}: objective {best_score:.6}");
        if best == previous {
            trace.converged = true;
            break;
        }
    }

    Ok(SearchOutcome {
        best: backend.sequence(best)?,
        objective: best_score,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub replacement: Replacement,
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_trace(
    path: impl AsRef<Path>,
    trace: &SearchTrace,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in &trace.replacements {
        serde_json::to_writer(
            &mut buf,
            &TraceRecord {
                replacement: *r,
                seed,
                config_hash: config_hash.to_string(),
            },
        )?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Final result file of a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub ids: Vec<TokenId>,
    pub surface: String,
    pub objective: f64,
    pub epochs: usize,
    pub candidates_scored: u64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        for bad in [
            SearchConfig {
                chunk_size: 0,
                ..Default::default()
            },
            SearchConfig {
                max_epochs: 0,
                ..Default::default()
            },
            SearchConfig {
                vocab_limit: Some(0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
