mod common;

use std::fs;

use hubtext_core::corpus::{BaselineHypothesis, NUM_SPECIAL};
use hubtext_core::metric::{BackendInfo, Triple};
use hubtext_core::report::{
    distribution_export, evaluate_baselines, evaluate_hypothesis, evaluate_text,
    leaderboard_insert, mean_sd, transfer_eval,
};
use hubtext_core::toy::{toy_corpus, toy_vocabulary, ToyConfig, SPECIAL_TOKENS};
use hubtext_core::{Dataset, Embedding, Error, MetricBackend, TokenId, Vocabulary};

/// Embeds a text as its first token id and scores each case from a fixed
/// table keyed by that id.
struct TableMetric {
    info: BackendInfo,
    vocab: Vocabulary,
    table: Vec<f64>,
}

impl TableMetric {
    fn new(table: Vec<f64>) -> Self {
        let vocab = toy_vocabulary(12, 0).unwrap();
        Self {
            info: BackendInfo {
                name: "table".into(),
                dim: 1,
                vocab_size: vocab.len(),
                supports_gradient: false,
                score_range: [0.0, 1.0],
            },
            vocab,
            table,
        }
    }
}

impl MetricBackend for TableMetric {
    fn info(&self) -> &BackendInfo {
        &self.info
    }
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
    fn embed(&self, ids: &[TokenId]) -> hubtext_core::Result<Embedding> {
        Embedding::new(vec![ids[0] as f64])
    }
    fn score_batch(&self, triples: &[Triple<'_>]) -> hubtext_core::Result<Vec<f64>> {
        triples
            .iter()
            .map(|t| {
                let key = t.src.as_slice()[0] as usize - NUM_SPECIAL;
                self.table
                    .get(key)
                    .copied()
                    .ok_or_else(|| Error::Protocol(format!("no score for source {key}")))
            })
            .collect()
    }
    fn grad(&self, _: &Embedding, _: &Embedding, _: &Embedding) -> hubtext_core::Result<Embedding> {
        Err(Error::GradientUnsupported {
            backend: "table".into(),
        })
    }
}

/// Cases whose sources start with tokens 4, 5, 6, ... in order.
fn table_dataset(metric: &TableMetric, n: usize) -> Dataset {
    let words = &metric.vocab.tokens()[NUM_SPECIAL..];
    let pairs: Vec<(String, String)> = (0..n)
        .map(|i| (words[i].clone(), words[(i + 1) % words.len()].clone()))
        .collect();
    Dataset::from_pairs("table", &pairs, &metric.vocab)
}

#[test]
fn three_case_mean_and_sd_match_hand_values() {
    let metric = TableMetric::new(vec![0.25, 0.5, 0.875]);
    let data = table_dataset(&metric, 3);
    let report = evaluate_text("hub", "ba ", &data, &metric).unwrap();
    let scores: Vec<f64> = report.per_case.iter().map(|c| c.score_pct).collect();
    assert_eq!(scores, [25.0, 50.0, 87.5]);
    // Deviations from 325/6 are -175/6, -25/6 and 200/6.
    let mean = 325.0 / 6.0;
    let sd = (71250.0f64 / 108.0).sqrt();
    assert!((report.mean - mean).abs() < 1e-12);
    assert!((report.sd - sd).abs() < 1e-12);
    assert!(report.sd_convention.contains("population"));
}

#[test]
fn constant_backend_has_zero_sd() {
    let metric = TableMetric::new(vec![0.6; 8]);
    let data = table_dataset(&metric, 8);
    let report = evaluate_text("hub", "ba ", &data, &metric).unwrap();
    assert_eq!(report.sd, 0.0);
    assert_eq!(report.per_case.len(), 8);
}

#[test]
fn backend_errors_name_the_case() {
    let metric = TableMetric::new(vec![0.1, 0.2]);
    let data = table_dataset(&metric, 3);
    let err = evaluate_text("hub", "ba ", &data, &metric).unwrap_err();
    assert!(err.to_string().starts_with("case 2:"), "{err}");
}

fn builtin_toy() -> (hubtext_core::BuiltinMetric, Dataset) {
    let corpus = toy_corpus(&ToyConfig {
        tune_pairs: 15,
        ..Default::default()
    })
    .unwrap();
    let metric = common::builtin(6, corpus.vocab.len(), 16, 8);
    let mut data = corpus.tune_dataset();
    data.cache_embeddings(&metric).unwrap();
    (metric, data)
}

#[test]
fn report_values_are_recomputable() {
    let (metric, data) = builtin_toy();
    let h = metric.sequence(vec![5, 6, 7]).unwrap();
    let report = evaluate_hypothesis("hub", &h, &data, &metric).unwrap();
    assert_eq!(report.per_case.len(), data.len());
    assert_eq!(report.hypothesis, h.surface);
    assert_eq!(report.dataset, "tune");
    let n = report.per_case.len() as f64;
    let mean = report.per_case.iter().map(|c| c.score_pct).sum::<f64>() / n;
    let var = report
        .per_case
        .iter()
        .map(|c| (c.score_pct - mean).powi(2))
        .sum::<f64>()
        / n;
    assert!((report.mean - mean).abs() < 1e-12);
    assert!((report.sd - var.sqrt()).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    assert_eq!(hubtext_core::SearchReport::load(&path).unwrap(), report);
}

#[test]
fn references_as_baselines_give_full_chrf() {
    let (metric, data) = builtin_toy();
    let hyps: Vec<BaselineHypothesis> = data
        .cases
        .iter()
        .map(|c| BaselineHypothesis {
            id: None,
            hyp: c.reference_text.clone(),
        })
        .collect();
    let report = evaluate_baselines("refs", &hyps, &data, &metric).unwrap();
    assert_eq!(report.chrf_mean, 100.0);
    // Each case used its own line: scores differ across cases.
    let first = report.per_case[0].score_pct;
    assert!(report.per_case.iter().any(|c| c.score_pct != first));
}

#[test]
fn misaligned_baselines_report_both_counts() {
    let corpus = toy_corpus(&ToyConfig {
        tune_pairs: 997,
        test_pairs: 0,
        ..Default::default()
    })
    .unwrap();
    let metric = common::builtin(7, corpus.vocab.len(), 8, 4);
    let data = corpus.tune_dataset();
    let hyps = vec![
        BaselineHypothesis {
            id: None,
            hyp: "ba ".into()
        };
        996
    ];
    let err = evaluate_baselines("m2m", &hyps, &data, &metric).unwrap_err();
    assert_eq!(err.to_string(), "997 cases, 996 hypotheses");
}

#[test]
fn transfer_to_a_disjoint_language() {
    let lang0 = toy_corpus(&ToyConfig {
        language: 0,
        ..Default::default()
    })
    .unwrap();
    let lang1 = toy_corpus(&ToyConfig {
        language: 1,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(lang0.vocab.tokens()[NUM_SPECIAL..].iter().cloned());
    tokens.extend(lang1.vocab.tokens()[NUM_SPECIAL..].iter().cloned());
    let vocab = Vocabulary::new(tokens).unwrap();
    let params = hubtext_core::MiniMetricParams::from_seed(1, vocab.len(), 16, 8).unwrap();
    let metric = hubtext_core::BuiltinMetric::new(vocab.clone(), params).unwrap();

    let home = Dataset::from_pairs("home", &lang0.tune, &vocab);
    let away = Dataset::from_pairs("away", &lang1.tune, &vocab);
    let hub = vocab.tokenize(&lang0.tune[0].1);
    let reports = transfer_eval("hub", &hub, &[home.clone(), away], &metric).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(
        reports[0],
        evaluate_hypothesis("hub", &hub, &home, &metric).unwrap()
    );
    let away = &reports[1];
    assert_eq!(away.dataset, "away");
    assert!(away.per_case.iter().all(|c| c.score_pct.is_finite()));
    assert_eq!(away.chrf_mean, 0.0);
    assert!(reports[0].chrf_mean > 0.0);
}

#[derive(serde::Deserialize)]
struct System {
    name: String,
    score: f64,
}

#[test]
fn wmt23_en_ja_leaderboard_placement() {
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/wmt23_en_ja.json"
    ))
    .unwrap();
    let systems: Vec<System> = serde_json::from_str(&text).unwrap();
    let pairs: Vec<(String, f64)> = systems.into_iter().map(|s| (s.name, s.score)).collect();
    let board = leaderboard_insert(&pairs, "hub text", 83.1).unwrap();
    let hub = board.iter().position(|e| e.is_hub).unwrap();
    assert_eq!(board[hub - 1].name, "Lan-BridgeMT");
    assert_eq!(board[hub - 1].score, 84.5);
    assert_eq!(board[hub + 1].name, "ANVITA");
    assert_eq!(board[hub + 1].score, 82.7);
    // ONLINE-M's listed 13.3 sorts to the bottom, so the hub is 10th of 17.
    assert_eq!(board[hub].rank, 10);
    assert_eq!(board.len(), 17);
    assert_eq!(board.last().unwrap().name, "ONLINE-M");
    assert!(board.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn distribution_export_writes_rows_in_series_order() {
    let (metric, data) = builtin_toy();
    let a =
        evaluate_hypothesis("decode", &metric.sequence(vec![4]).unwrap(), &data, &metric).unwrap();
    let b = evaluate_hypothesis(
        "local-search",
        &metric.sequence(vec![9, 9]).unwrap(),
        &data,
        &metric,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = (dir.path().join("d.csv"), dir.path().join("d.json"));
    let summary = distribution_export(&[a.clone(), b.clone()], &csv, &json, None).unwrap();

    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "series,case_index,score_pct");
    assert_eq!(lines.len(), 1 + 2 * data.len());
    assert!(lines[1].starts_with("tune/decode,0,"));
    assert!(lines[1 + data.len()].starts_with("tune/local-search,0,"));
    let value: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(value, a.per_case[0].score_pct);

    assert_eq!(summary.series.len(), 2);
    assert_eq!(summary.series[0].series, "tune/decode");
    let stored: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(
        stored["series"][1]["box"]["median"],
        summary.series[1].stats.median
    );
    assert!(distribution_export(&[], &csv, &json, None).is_err());
}

#[test]
fn mean_sd_of_single_value() {
    assert_eq!(mean_sd(&[42.0]), (42.0, 0.0));
}
