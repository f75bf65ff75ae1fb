//! Analytic hypothesis gradient of the builtin metric against central
//! finite differences.

mod common;

use std::time::Instant;

use hubtext_core::{Embedding, MetricBackend};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
const TRIPLES: usize = 100;

/// |h - x| has a kink at h = x; keep every component at least ten steps away
/// so the finite difference never straddles one.
fn away_from_kinks(h: &[f64], x: &[f64], y: &[f64]) -> bool {
    h.iter()
        .zip(x)
        .zip(y)
        .all(|((h, x), y)| (h - x).abs() >= 10.0 * STEP && (h - y).abs() >= 10.0 * STEP)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn max_error_over_triples(dim: usize, seed: u64) -> f64 {
    let metric = common::builtin(seed, 40, dim, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIPLES {
        let x = common::random_vec(&mut rng, dim, 1.0);
        let y = common::random_vec(&mut rng, dim, 1.0);
        let h = loop {
            let h = common::random_vec(&mut rng, dim, 1.0);
            if away_from_kinks(&h, &x, &y) {
                break h;
            }
        };
        let (xe, ye) = (Embedding::new(x).unwrap(), Embedding::new(y).unwrap());
        let grad = metric
            .grad(&xe, &Embedding::new(h.clone()).unwrap(), &ye)
            .unwrap();
        for k in 0..dim {
            let mut plus = h.clone();
            plus[k] += STEP;
            let mut minus = h.clone();
            minus[k] -= STEP;
            let sp = metric
                .score(&xe, &Embedding::new(plus).unwrap(), &ye)
                .unwrap();
            let sm = metric
                .score(&xe, &Embedding::new(minus).unwrap(), &ye)
                .unwrap();
            let numeric = (sp - sm) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.as_slice()[k], numeric));
        }
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_d8() {
    let start = Instant::now();
    let worst = max_error_over_triples(8, 11);
    println!("D=8: max relative error {worst:.3e}");
    assert!(worst <= TOLERANCE, "max relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn gradient_matches_finite_differences_d64() {
    let start = Instant::now();
    let worst = max_error_over_triples(64, 12);
    println!("D=64: max relative error {worst:.3e}");
    assert!(worst <= TOLERANCE, "max relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn summed_gradient_is_sum_of_case_gradients() {
    let metric = common::builtin(3, 40, 16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(Embedding, Embedding)> = (0..6)
        .map(|_| {
            (
                common::random_embedding(&mut rng, 16, 1.0),
                common::random_embedding(&mut rng, 16, 1.0),
            )
        })
        .collect();
    let hub = common::random_embedding(&mut rng, 16, 1.0);
    let prepared = metric.prepare(pairs.clone()).unwrap();
    let (total, grad) = metric.total_score_and_grad(&hub, &prepared).unwrap();

    let mut expect_total = 0.0;
    let mut expect_grad = vec![0.0; 16];
    for (x, y) in &pairs {
        expect_total += metric.score(x, &hub, y).unwrap();
        let g = metric.grad(x, &hub, y).unwrap();
        for (acc, v) in expect_grad.iter_mut().zip(g.as_slice()) {
            *acc += v;
        }
    }
    assert_eq!(total, expect_total);
    for (a, b) in grad.as_slice().iter().zip(&expect_grad) {
        assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
    }
}
