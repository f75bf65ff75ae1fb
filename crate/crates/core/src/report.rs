//! Evaluation of fixed hypotheses and the tables built from them.
//!
//! All scores are reported as percentages (raw backend score times 100).
//! Standard deviations are population SDs (divisor `n`); quartiles use
//! linear interpolation between order statistics.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BaselineHypothesis, Dataset, EvalCase, TokenSequence};
use crate::error::{Error, Result};
use crate::metric::{chrf, Embedding, MetricBackend};

pub const SD_CONVENTION: &str = "population standard deviation (divisor n)";
pub const QUARTILE_CONVENTION: &str = "linear interpolation between order statistics";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub index: usize,
    /// The case's `id` when the data file had one, else its index.
    pub case: String,
    pub score_pct: f64,
    pub chrf: f64,
}

/// Seed and configuration hash of the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    /// Series label, e.g. `decode`, `local-search` or `baseline`.
    pub label: String,
    pub dataset: String,
    pub backend: String,
    pub hypothesis: String,
    pub mean: f64,
    pub sd: f64,
    pub chrf_mean: f64,
    pub sd_convention: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub per_case: Vec<CaseScore>,
}

impl SearchReport {
    fn build(
        label: &str,
        data: &Dataset,
        backend: &dyn MetricBackend,
        hypothesis: String,
        per_case: Vec<CaseScore>,
    ) -> Self {
        let scores: Vec<f64> = per_case.iter().map(|c| c.score_pct).collect();
        let (mean, sd) = mean_sd(&scores);
        let chrfs: Vec<f64> = per_case.iter().map(|c| c.chrf).collect();
        let (chrf_mean, _) = mean_sd(&chrfs);
        Self {
            label: label.to_string(),
            dataset: data.name.clone(),
            backend: backend.info().name.clone(),
            hypothesis,
            mean,
            sd,
            chrf_mean,
            sd_convention: SD_CONVENTION.to_string(),
            provenance: None,
            per_case,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Arithmetic mean and population standard deviation, summed in order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().fold(0.0, |acc, v| acc + v) / n;
    let var = values
        .iter()
        .fold(0.0, |acc, v| acc + (v - mean) * (v - mean))
        / n;
    (mean, var.sqrt())
}

fn case_embeddings(case: &EvalCase, backend: &dyn MetricBackend) -> Result<(Embedding, Embedding)> {
    let src = match &case.source_embedding {
        Some(e) => e.clone(),
        None => backend.embed(&case.source.ids)?,
    };
    let reference = match &case.reference_embedding {
        Some(e) => e.clone(),
        None => backend.embed(&case.reference.ids)?,
    };
    Ok((src, reference))
}

/// Scores one fixed hypothesis against every case of `data`.
pub fn evaluate_hypothesis(
    label: &str,
    h: &TokenSequence,
    data: &Dataset,
    backend: &dyn MetricBackend,
) -> Result<SearchReport> {
    if data.is_empty() {
        return Err(Error::Report(format!("dataset `{}` is empty", data.name)));
    }
    let hyp = backend.embed(&h.ids)?;
    let per_case = data
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let (src, reference) = case_embeddings(case, backend)?;
            let score = backend.score(&src, &hyp, &reference)?;
            Ok(CaseScore {
                index: i,
                case: case.label(i),
                score_pct: 100.0 * score,
                chrf: chrf(&h.surface, &case.reference_text),
            })
        })
        .enumerate()
        .map(|(i, r): (usize, Result<CaseScore>)| r.map_err(|e| e.context(format!("case {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport::build(
        label,
        data,
        backend,
        h.surface.clone(),
        per_case,
    ))
}

/// Tokenizes `text` with the backend's vocabulary and evaluates it.
pub fn evaluate_text(
    label: &str,
    text: &str,
    data: &Dataset,
    backend: &dyn MetricBackend,
) -> Result<SearchReport> {
    let h = backend.vocabulary().tokenize(text);
    evaluate_hypothesis(label, &h, data, backend)
}

/// Scores each case with its own line of `hyps`, aligned by order.
pub fn evaluate_baselines(
    label: &str,
    hyps: &[BaselineHypothesis],
    data: &Dataset,
    backend: &dyn MetricBackend,
) -> Result<SearchReport> {
    if hyps.len() != data.len() {
        return Err(Error::Report(format!(
            "{} cases, {} hypotheses",
            data.len(),
            hyps.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::Report(format!("dataset `{}` is empty", data.name)));
    }
    let vocab = backend.vocabulary();
    let per_case = data
        .cases
        .par_iter()
        .zip(hyps.par_iter())
        .enumerate()
        .map(|(i, (case, baseline))| {
            let run = || -> Result<CaseScore> {
                let (src, reference) = case_embeddings(case, backend)?;
                let hyp = backend.embed(&vocab.tokenize(&baseline.hyp).ids)?;
                let score = backend.score(&src, &hyp, &reference)?;
                Ok(CaseScore {
                    index: i,
                    case: case.label(i),
                    score_pct: 100.0 * score,
                    chrf: chrf(&baseline.hyp, &case.reference_text),
                })
            };
            run().map_err(|e| e.context(format!("case {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport::build(
        label,
        data,
        backend,
        "<per-case hypotheses>".into(),
        per_case,
    ))
}

/// Evaluates one hypothesis on several datasets.
pub fn transfer_eval(
    label: &str,
    h: &TokenSequence,
    datasets: &[Dataset],
    backend: &dyn MetricBackend,
) -> Result<Vec<SearchReport>> {
    datasets
        .iter()
        .map(|d| {
            evaluate_hypothesis(label, h, d, backend)
                .map_err(|e| e.context(format!("dataset `{}`", d.name)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub name: String,
    pub score: f64,
    pub rank: usize,
    pub is_hub: bool,
}

/// Inserts the hub into a system ranking, sorted by descending score. The
/// sort is stable and the hub enters last, so it ranks below any system it ties.
pub fn leaderboard_insert(
    systems: &[(String, f64)],
    hub_name: &str,
    hub_score: f64,
) -> Result<Vec<LeaderboardEntry>> {
    if let Some((name, s)) = systems.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Report(format!(
            "system `{name}` has non-finite score {s}"
        )));
    }
    if !hub_score.is_finite() {
        return Err(Error::Report(format!(
            "hub score {hub_score} is not finite"
        )));
    }
    let mut entries: Vec<LeaderboardEntry> = systems
        .iter()
        .map(|(name, score)| LeaderboardEntry {
            name: name.clone(),
            score: *score,
            rank: 0,
            is_hub: false,
        })
        .chain(std::iter::once(LeaderboardEntry {
            name: hub_name.to_string(),
            score: hub_score,
            rank: 0,
            is_hub: true,
        }))
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    /// Lowest value inside the lower fence (`q1 - 1.5 IQR`).
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Highest value inside the upper fence (`q3 + 1.5 IQR`).
    pub max: f64,
    /// Values outside the fences, ascending.
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Report("box statistics of an empty series".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Report("box statistics of non-finite values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let median = quantile(&sorted, 0.5);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = |v: &&f64| **v >= lo_fence && **v <= hi_fence;
        let min = sorted.iter().find(inside).copied().unwrap_or(q1).min(q1);
        let max = sorted
            .iter()
            .rev()
            .find(inside)
            .copied()
            .unwrap_or(q3)
            .max(q3);
        let outliers = sorted.iter().filter(|v| !inside(v)).copied().collect();
        Ok(Self {
            min,
            q1,
            median,
            q3,
            max,
            outliers,
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBox {
    pub series: String,
    pub n: usize,
    #[serde(rename = "box")]
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub quartile_convention: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub series: Vec<SeriesBox>,
}

fn series_name(report: &SearchReport) -> String {
    format!("{}/{}", report.dataset, report.label)
}

/// Writes per-case scores as CSV (`series,case_index,score_pct`) and the
/// per-series box statistics as JSON. Series appear in input order.
pub fn distribution_export(
    reports: &[SearchReport],
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
    provenance: Option<Provenance>,
) -> Result<DistributionSummary> {
    if reports.is_empty() {
        return Err(Error::Report("no reports to export".into()));
    }
    let csv_path = csv_path.as_ref();
    let io_err = |e: csv::Error| Error::Report(format!("{}: {e}", csv_path.display()));
    let mut writer = csv::Writer::from_path(csv_path).map_err(io_err)?;
    writer
        .write_record(["series", "case_index", "score_pct"])
        .map_err(io_err)?;
    let mut series = Vec::with_capacity(reports.len());
    for report in reports {
        let name = series_name(report);
        for case in &report.per_case {
            writer
                .write_record([
                    name.clone(),
                    case.index.to_string(),
                    case.score_pct.to_string(),
                ])
                .map_err(io_err)?;
        }
        let scores: Vec<f64> = report.per_case.iter().map(|c| c.score_pct).collect();
        series.push(SeriesBox {
            series: name,
            n: scores.len(),
            stats: BoxStats::from_values(&scores)?,
        });
    }
    writer.flush().map_err(|e| Error::io(csv_path, e))?;

    let summary = DistributionSummary {
        quartile_convention: QUARTILE_CONVENTION.to_string(),
        provenance,
        series,
    };
    let json_path = json_path.as_ref();
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))?;
    Ok(summary)
}

/// Fixed-width table: one row per report with mean ± SD and chrF.
pub fn format_table(rows: &[(&str, &SearchReport)]) -> String {
    let mut out = format!(
        "{:<16} {:>16} {:>8}\n",
        "Hypotheses", "Score% (±SD)", "chrF%"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<16} {:>9.1} ±{:>5.1} {:>8.1}\n",
            name, r.mean, r.sd, r.chrf_mean
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn mean_sd_hand_values() {
        // 2, 4, 9: mean 5, squared deviations 9 + 1 + 16 = 26.
        let (m, sd) = mean_sd(&[2.0, 4.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-12);
        assert!((sd - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_sd(&[7.5; 4]), (7.5, 0.0));
    }

    #[test]
    fn box_stats_flags_far_outlier() {
        let b = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.q1, 2.0);
        assert_eq!(b.median, 3.0);
        assert_eq!(b.q3, 4.0);
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.min, 1.0);
        assert_eq!(b.max, 4.0);
    }

    #[test]
    fn box_stats_interpolates() {
        let b = BoxStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(b.q1, 1.75);
        assert_eq!(b.median, 2.5);
        assert_eq!(b.q3, 3.25);
        assert!(b.outliers.is_empty());
        assert!(BoxStats::from_values(&[]).is_err());
    }

    fn systems(list: &[(&str, f64)]) -> Vec<(String, f64)> {
        list.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    #[test]
    fn hub_above_everyone_ranks_first() {
        let board = leaderboard_insert(&systems(&[("a", 50.0), ("b", 60.0)]), "hub", 99.0).unwrap();
        assert_eq!(board[0].name, "hub");
        assert_eq!(board[0].rank, 1);
        assert!(board[0].is_hub);
        assert_eq!(board[1].name, "b");
    }

    #[test]
    fn hub_ties_rank_after_system() {
        let board = leaderboard_insert(&systems(&[("a", 70.0), ("b", 60.0)]), "hub", 70.0).unwrap();
        let names: Vec<_> = board.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a", "hub", "b"]);
        assert_eq!(board[1].rank, 2);
    }

    #[test]
    fn leaderboard_rejects_nan() {
        assert!(leaderboard_insert(&systems(&[("a", f64::NAN)]), "hub", 1.0).is_err());
        assert!(leaderboard_insert(&[], "hub", f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn box_stats_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            let b = BoxStats::from_values(&values).unwrap();
            prop_assert!(b.min <= b.q1);
            prop_assert!(b.q1 <= b.median);
            prop_assert!(b.median <= b.q3);
            prop_assert!(b.q3 <= b.max);
            let inside = values.len() - b.outliers.len();
            prop_assert!(inside >= 1);
        }

        #[test]
        fn sd_is_recomputable(values in prop::collection::vec(0f64..100.0, 1..50)) {
            let (m, sd) = mean_sd(&values);
            let n = values.len() as f64;
            let m2 = values.iter().sum::<f64>() / n;
            let sd2 = (values.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((m - m2).abs() < 1e-12);
            prop_assert!((sd - sd2).abs() < 1e-9);
        }
    }
}
