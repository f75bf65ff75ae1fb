//! HTTP client for metric servers speaking the JSON wire protocol.
//!
//! Endpoints: `GET /info`, `GET /vocab?offset&limit`, `POST /embed`,
//! `POST /score_batch`, `POST /grad`, `POST /detokenize`. Errors arrive as
//! non-2xx responses with an `{"error": ...}` body.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendInfo, Embedding, MetricBackend, PreparedCases, Triple};
use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub(crate) const VOCAB_PAGE: usize = 4096;
const MAX_TRIPLES_PER_REQUEST: usize = 4096;
const MAX_SEQUENCES_PER_REQUEST: usize = 1024;

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct InfoResponse {
    pub name: String,
    pub dim: usize,
    pub vocab_size: usize,
    pub supports_gradient: bool,
    pub score_range: [f64; 2],
    pub protocol_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct VocabResponse {
    pub tokens: Vec<String>,
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EmbedRequest {
    pub token_ids: Vec<Vec<TokenId>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireTriple {
    pub src: Vec<f64>,
    pub hyp: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ScoreBatchRequest {
    pub triples: Vec<WireTriple>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ScoreBatchResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct GradResponse {
    pub grad: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DetokenizeRequest {
    pub token_ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ErrorResponse {
    pub error: String,
}

/// A metric hosted behind the wire protocol. The underlying agent pools
/// connections and is shared by all worker threads.
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
    info: BackendInfo,
    vocab: Vocabulary,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("info", &self.info)
            .finish()
    }
}

impl RemoteBackend {
    /// Connects to `endpoint`, checks the protocol version and downloads the vocabulary.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build();
        let agent = ureq::Agent::new_with_config(config);
        let mut backend = Self {
            endpoint,
            agent,
            info: BackendInfo {
                name: String::new(),
                dim: 0,
                vocab_size: 0,
                supports_gradient: false,
                score_range: [0.0, 1.0],
            },
            vocab: Vocabulary::new(["<pad>", "<unk>", "<s>", "</s>"].map(String::from).to_vec())?,
        };

        let info: InfoResponse = backend.get("/info")?;
        if info.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "protocol version mismatch: server speaks {}, client speaks {PROTOCOL_VERSION}",
                info.protocol_version
            )));
        }
        backend.info = BackendInfo {
            name: info.name,
            dim: info.dim,
            vocab_size: info.vocab_size,
            supports_gradient: info.supports_gradient,
            score_range: info.score_range,
        };
        backend.info.validate()?;

        let mut tokens = Vec::with_capacity(info.vocab_size);
        while tokens.len() < info.vocab_size {
            let offset = tokens.len();
            let page: VocabResponse =
                backend.get(&format!("/vocab?offset={offset}&limit={VOCAB_PAGE}"))?;
            if page.offset != offset {
                return Err(Error::Protocol(format!(
                    "vocabulary page offset {} does not match request {offset}",
                    page.offset
                )));
            }
            if page.tokens.is_empty() {
                return Err(Error::Protocol(format!(
                    "vocabulary ended at {offset} of {} tokens",
                    info.vocab_size
                )));
            }
            tokens.extend(page.tokens);
        }
        tokens.truncate(info.vocab_size);
        backend.vocab = Vocabulary::new(tokens)?;
        Ok(backend)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn connection_error(&self, e: ureq::Error) -> Error {
        Error::Connection {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self
            .agent
            .get(format!("{}{path}", self.endpoint))
            .call()
            .map_err(|e| self.connection_error(e))?;
        self.decode(path, resp)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let payload = serde_json::to_string(body)?;
        let resp = self
            .agent
            .post(format!("{}{path}", self.endpoint))
            .header("content-type", "application/json")
            .send(payload)
            .map_err(|e| self.connection_error(e))?;
        self.decode(path, resp)
    }

    fn decode<T: DeserializeOwned>(
        &self,
        path: &str,
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T> {
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.connection_error(e))?;
        if !(200..300).contains(&status) {
            if status == 404 && path == "/grad" {
                return Err(Error::GradientUnsupported {
                    backend: self.info.name.clone(),
                });
            }
            let message = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(Error::Protocol(format!(
                "{path} returned {status}: {message}"
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::Protocol(format!("{path}: malformed response: {e}")))
    }

    fn embedding(&self, values: Vec<f64>) -> Result<Embedding> {
        let e = Embedding::new(values)?;
        e.expect_dim(self.info.dim)?;
        Ok(e)
    }

    fn check_score(&self, score: f64) -> Result<f64> {
        let [lo, hi] = self.info.score_range;
        if score.is_finite() && score >= lo && score <= hi {
            Ok(score)
        } else {
            Err(Error::Protocol(format!(
                "score out of declared range: {score} not in [{lo}, {hi}]"
            )))
        }
    }
}

impl MetricBackend for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embed(&self, ids: &[TokenId]) -> Result<Embedding> {
        let mut out = self.embed_batch(&[ids.to_vec()])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, batch: &[Vec<TokenId>]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(MAX_SEQUENCES_PER_REQUEST) {
            for ids in chunk {
                for &id in ids {
                    self.vocab.check(id)?;
                }
            }
            let resp: EmbedResponse = self.post(
                "/embed",
                &EmbedRequest {
                    token_ids: chunk.to_vec(),
                },
            )?;
            if resp.embeddings.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/embed returned {} embeddings for {} sequences",
                    resp.embeddings.len(),
                    chunk.len()
                )));
            }
            for values in resp.embeddings {
                out.push(self.embedding(values)?);
            }
        }
        Ok(out)
    }

    fn score_batch(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(triples.len());
        for chunk in triples.chunks(MAX_TRIPLES_PER_REQUEST) {
            let wire = chunk
                .iter()
                .map(|t| {
                    for e in [t.src, t.hyp, t.reference] {
                        e.expect_dim(self.info.dim)?;
                    }
                    Ok(WireTriple {
                        src: t.src.as_slice().to_vec(),
                        hyp: t.hyp.as_slice().to_vec(),
                        reference: t.reference.as_slice().to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let resp: ScoreBatchResponse =
                self.post("/score_batch", &ScoreBatchRequest { triples: wire })?;
            if resp.scores.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/score_batch returned {} scores for {} triples",
                    resp.scores.len(),
                    chunk.len()
                )));
            }
            for s in resp.scores {
                out.push(self.check_score(s)?);
            }
        }
        Ok(out)
    }

    fn grad(&self, src: &Embedding, hyp: &Embedding, reference: &Embedding) -> Result<Embedding> {
        if !self.info.supports_gradient {
            return Err(Error::GradientUnsupported {
                backend: self.info.name.clone(),
            });
        }
        let body = WireTriple {
            src: src.as_slice().to_vec(),
            hyp: hyp.as_slice().to_vec(),
            reference: reference.as_slice().to_vec(),
        };
        let resp: GradResponse = self.post("/grad", &body)?;
        self.embedding(resp.grad)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let resp: DetokenizeResponse = self.post(
            "/detokenize",
            &DetokenizeRequest {
                token_ids: ids.to_vec(),
            },
        )?;
        Ok(resp.text)
    }

    /// One request stream for the whole chunk of hypotheses.
    fn total_scores(&self, hyps: &[Embedding], cases: &PreparedCases) -> Result<Vec<f64>> {
        let triples: Vec<Triple<'_>> = hyps
            .iter()
            .flat_map(|hyp| {
                cases.pairs().iter().map(move |(src, reference)| Triple {
                    src,
                    hyp,
                    reference,
                })
            })
            .collect();
        let scores = self.score_batch(&triples)?;
        let n = cases.len();
        Ok((0..hyps.len())
            .map(|i| {
                scores[i * n..(i + 1) * n]
                    .iter()
                    .fold(0.0, |acc, s| acc + s)
            })
            .collect())
    }
}
