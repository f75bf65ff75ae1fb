//! Synthetic vocabularies and parallel corpora for tests, benches and smoke runs.
//!
//! Every non-special token is a word of consonant-vowel syllables followed
//! by a single space, so greedy longest-match tokenization of generated text
//! gives back exactly the generating ids. Language 0 is lowercase and
//! language 1 uppercase; their character sets do not overlap.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Dataset, Vocabulary, NUM_SPECIAL};
use crate::error::{Error, Result};

const CONSONANTS: &str = "bcdfghjklmnpqrstvwxyz";
const VOWELS: &str = "aeiou";
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub tune_pairs: usize,
    pub test_pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// 0 or 1; selects a disjoint character set.
    pub language: u8,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            tune_pairs: 20,
            test_pairs: 10,
            min_len: 3,
            max_len: 8,
            language: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub vocab: Vocabulary,
    pub tune: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

/// Words of one, two, three... syllables, in a fixed order.
fn words(n: usize, language: u8) -> Vec<String> {
    let syllables: Vec<String> = CONSONANTS
        .chars()
        .flat_map(|c| VOWELS.chars().map(move |v| format!("{c}{v}")))
        .collect();
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut layer: Vec<String> = vec![String::new()];
    while out.len() < n {
        layer = layer
            .iter()
            .flat_map(|prefix| syllables.iter().map(move |s| format!("{prefix}{s}")))
            .take(n - out.len())
            .collect();
        out.extend(layer.iter().cloned());
    }
    out.into_iter()
        .map(|w| {
            let w = if language == 0 { w } else { w.to_uppercase() };
            w + " "
        })
        .collect()
}

pub fn toy_vocabulary(size: usize, language: u8) -> Result<Vocabulary> {
    if size <= NUM_SPECIAL {
        return Err(Error::Config(format!(
            "toy vocabulary needs more than {NUM_SPECIAL} tokens, got {size}"
        )));
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(words(size - NUM_SPECIAL, language));
    Vocabulary::new(tokens)
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &Vocabulary, cfg: &ToyConfig) -> Vec<usize> {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    (0..len)
        .map(|_| rng.random_range(NUM_SPECIAL..vocab.len()))
        .collect()
}

fn render(vocab: &Vocabulary, ids: &[usize]) -> String {
    ids.iter().map(|&i| vocab.tokens()[i].as_str()).collect()
}

/// Generates a corpus. The reference of each pair is its source with about
/// a third of the tokens resampled.
pub fn toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.language > 1 {
        return Err(Error::Config(format!("invalid toy config {cfg:?}")));
    }
    let vocab = toy_vocabulary(cfg.vocab_size, cfg.language)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pair = |rng: &mut ChaCha8Rng| {
        let src = sentence(rng, &vocab, cfg);
        let reference: Vec<usize> = src
            .iter()
            .map(|&t| {
                if rng.random_bool(1.0 / 3.0) {
                    rng.random_range(NUM_SPECIAL..vocab.len())
                } else {
                    t
                }
            })
            .collect();
        (render(&vocab, &src), render(&vocab, &reference))
    };
    let tune = (0..cfg.tune_pairs).map(|_| pair(&mut rng)).collect();
    let test = (0..cfg.test_pairs).map(|_| pair(&mut rng)).collect();
    Ok(ToyCorpus { vocab, tune, test })
}

impl ToyCorpus {
    pub fn tune_dataset(&self) -> Dataset {
        Dataset::from_pairs("tune", &self.tune, &self.vocab)
    }

    pub fn test_dataset(&self) -> Dataset {
        Dataset::from_pairs("test", &self.test, &self.vocab)
    }

    /// Writes `vocab.txt`, `tune.jsonl` and `test.jsonl` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vocab_path = dir.join("vocab.txt");
        fs::write(&vocab_path, self.vocab.to_file_contents())
            .map_err(|e| Error::io(&vocab_path, e))?;
        write_pairs(dir.join("tune.jsonl"), &self.tune)?;
        write_pairs(dir.join("test.jsonl"), &self.test)
    }
}

#[derive(Serialize)]
struct PairLine<'a> {
    id: String,
    src: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, (src, reference)) in pairs.iter().enumerate() {
        out += &serde_json::to_string(&PairLine {
            id: i.to_string(),
            src,
            reference,
        })?;
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
