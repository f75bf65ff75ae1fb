//! Data ingestion, vocabulary handling and the tokenization boundary.
//!
//! Token ids are dense indices into a [`Vocabulary`]. The first four ids are
//! always the special tokens `pad`, `unk`, `bos` and `eos`, in that order;
//! they never take part in longest-match tokenization and render as the
//! empty string.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metric::{Embedding, MetricBackend};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    special_ids: BTreeSet<TokenId>,
    index: HashMap<String, TokenId>,
    max_token_chars: usize,
}

impl Vocabulary {
    /// Builds a vocabulary whose first four entries are the special tokens.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL {
            return Err(Error::Vocabulary(format!(
                "need at least {NUM_SPECIAL} tokens (pad, unk, bos, eos), got {}",
                tokens.len()
            )));
        }
        if tokens.len() > TokenId::MAX as usize {
            return Err(Error::Vocabulary("too many tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_token_chars = 0;
        for (id, surface) in tokens.iter().enumerate() {
            if surface.is_empty() {
                return Err(Error::Vocabulary(format!("token {id} is empty")));
            }
            if index.insert(surface.clone(), id as TokenId).is_some() {
                return Err(Error::Vocabulary(format!(
                    "duplicate token {surface:?} at id {id}"
                )));
            }
            if id >= NUM_SPECIAL {
                max_token_chars = max_token_chars.max(surface.chars().count());
            }
        }
        Ok(Self {
            tokens,
            special_ids: (0..NUM_SPECIAL as TokenId).collect(),
            index,
            max_token_chars,
        })
    }

    /// Reads a vocabulary file: one surface per line, line number is the id.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let text = text.strip_suffix('\n').unwrap_or(&text);
        let tokens = text
            .split('\n')
            .map(|line| line.strip_suffix('\r').unwrap_or(line).to_string())
            .collect();
        Self::new(tokens)
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special_ids
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidToken {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    /// Non-special ids in ascending order, optionally truncated to the first `limit`.
    pub fn searchable_ids(&self, limit: Option<usize>) -> Vec<TokenId> {
        let ids = (0..self.tokens.len() as TokenId).filter(|id| !self.is_special(*id));
        match limit {
            Some(k) => ids.take(k).collect(),
            None => ids.collect(),
        }
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                id,
                size: self.tokens.len(),
            })
        }
    }

    /// Greedy longest-match tokenization. Characters not covered by any
    /// non-special token become `unk`; empty input becomes `[eos]`.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        if text.is_empty() {
            return TokenSequence {
                ids: vec![EOS],
                surface: String::new(),
            };
        }
        // Byte offset of every char boundary, including the end.
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < n_chars {
            let longest = self.max_token_chars.min(n_chars - pos);
            let matched = (1..=longest).rev().find_map(|len| {
                let piece = &text[bounds[pos]..bounds[pos + len]];
                match self.index.get(piece) {
                    Some(&id) if !self.is_special(id) => Some((id, len)),
                    _ => None,
                }
            });
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => {
                    ids.push(UNK);
                    pos += 1;
                }
            }
        }
        let surface = self.render(&ids);
        TokenSequence { ids, surface }
    }

    /// Concatenates token surfaces; special tokens contribute nothing.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        for &id in ids {
            self.check(id)?;
        }
        Ok(self.render(ids))
    }

    fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if !self.is_special(id) {
                out.push_str(&self.tokens[id as usize]);
            }
        }
        out
    }

    pub fn sequence(&self, ids: Vec<TokenId>) -> Result<TokenSequence> {
        if ids.is_empty() {
            return Err(Error::Config("token sequence must not be empty".into()));
        }
        let surface = self.detokenize(&ids)?;
        Ok(TokenSequence { ids, surface })
    }
}

/// A hub, hypothesis or reference text as token ids plus its rendered surface.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub surface: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One (source, reference) pair with optionally cached embeddings.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: Option<String>,
    /// Raw texts as read from disk; chrF is computed against these.
    pub source_text: String,
    pub reference_text: String,
    pub source: TokenSequence,
    pub reference: TokenSequence,
    pub source_embedding: Option<Embedding>,
    pub reference_embedding: Option<Embedding>,
}

impl EvalCase {
    pub fn new(id: Option<String>, src: &str, reference: &str, vocab: &Vocabulary) -> Self {
        Self {
            id,
            source_text: src.to_string(),
            reference_text: reference.to_string(),
            source: vocab.tokenize(src),
            reference: vocab.tokenize(reference),
            source_embedding: None,
            reference_embedding: None,
        }
    }

    /// Label used in reports: the explicit id when present, else the index.
    pub fn label(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| index.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub cases: Vec<EvalCase>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, cases: Vec<EvalCase>) -> Self {
        Self {
            name: name.into(),
            cases,
        }
    }

    pub fn from_pairs<S: AsRef<str>>(
        name: impl Into<String>,
        pairs: &[(S, S)],
        vocab: &Vocabulary,
    ) -> Self {
        let cases = pairs
            .iter()
            .map(|(s, r)| EvalCase::new(None, s.as_ref(), r.as_ref(), vocab))
            .collect();
        Self::new(name, cases)
    }

    /// Loads a JSONL file of `{"src": .., "ref": .., "id"?: ..}` objects.
    pub fn load_parallel(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cases = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let obj = parse_object(line, lineno)?;
            let src = string_field(&obj, "src", lineno)?;
            let reference = string_field(&obj, "ref", lineno)?;
            let id = optional_string_field(&obj, "id", lineno)?;
            cases.push(EvalCase::new(id, &src, &reference, vocab));
        }
        if cases.is_empty() {
            return Err(Error::corpus(
                None,
                format!("{}: empty file", path.display()),
            ));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Self::new(name, cases))
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn is_cached(&self) -> bool {
        self.cases
            .iter()
            .all(|c| c.source_embedding.is_some() && c.reference_embedding.is_some())
    }

    /// Fills every missing source/reference embedding. Runs in parallel;
    /// results are written back in case order.
    pub fn cache_embeddings(&mut self, backend: &dyn MetricBackend) -> Result<()> {
        let computed: Vec<(Embedding, Embedding)> = self
            .cases
            .par_iter()
            .map(|case| {
                let src = match &case.source_embedding {
                    Some(e) => e.clone(),
                    None => backend.embed(&case.source.ids)?,
                };
                let reference = match &case.reference_embedding {
                    Some(e) => e.clone(),
                    None => backend.embed(&case.reference.ids)?,
                };
                Ok((src, reference))
            })
            .collect::<Result<_>>()?;
        for (case, (src, reference)) in self.cases.iter_mut().zip(computed) {
            case.source_embedding = Some(src);
            case.reference_embedding = Some(reference);
        }
        Ok(())
    }
}

/// One line of a baseline hypotheses file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineHypothesis {
    pub id: Option<String>,
    pub hyp: String,
}

/// Loads a JSONL file of `{"hyp": .., "id"?: ..}` objects, in line order.
pub fn load_hypotheses(path: impl AsRef<Path>) -> Result<Vec<BaselineHypothesis>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj = parse_object(line, i + 1)?;
        out.push(BaselineHypothesis {
            id: optional_string_field(&obj, "id", i + 1)?,
            hyp: string_field(&obj, "hyp", i + 1)?,
        });
    }
    Ok(out)
}

fn parse_object(line: &str, lineno: usize) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::corpus(Some(lineno), "expected a JSON object")),
        Err(e) => Err(Error::corpus(Some(lineno), format!("invalid JSON: {e}"))),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str, lineno: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::corpus(
            Some(lineno),
            format!("field {key} must be a string"),
        )),
        None => Err(Error::corpus(Some(lineno), format!("missing field {key}"))),
    }
}

fn optional_string_field(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    lineno: usize,
) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::corpus(
            Some(lineno),
            format!("field {key} must be a string"),
        )),
    }
}
