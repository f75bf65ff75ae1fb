use std::collections::HashMap;

pub const CHRF_MAX_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

/// Character n-gram F-score in `[0, 100]`.
///
/// Whitespace is dropped before n-gram extraction. Orders 1 through 6 are
/// scored separately and averaged uniformly; an order for which the reference
/// has no n-grams is left out of the average. Returns 0 when no order remains
/// or the hypothesis has no characters.
pub fn chrf(hypothesis: &str, reference: &str) -> f64 {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let refr: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let beta2 = CHRF_BETA * CHRF_BETA;

    let mut sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=CHRF_MAX_ORDER {
        if refr.len() < n {
            break;
        }
        orders += 1;
        if hyp.len() < n {
            continue;
        }
        let ref_counts = ngram_counts(&refr, n);
        let hyp_counts = ngram_counts(&hyp, n);
        let matches: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        if matches == 0 {
            continue;
        }
        let precision = matches as f64 / (hyp.len() - n + 1) as f64;
        let recall = matches as f64 / (refr.len() - n + 1) as f64;
        sum += (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
    }
    if orders == 0 {
        0.0
    } else {
        100.0 * sum / orders as f64
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    for gram in chars.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}
