//! In-process HTTP server exposing any [`MetricBackend`] over the wire protocol.
//!
//! Used to check that the remote client reproduces in-process results, and as
//! a reference for servers implemented elsewhere.

use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::remote::{
    DetokenizeRequest, DetokenizeResponse, EmbedRequest, EmbedResponse, ErrorResponse,
    GradResponse, InfoResponse, ScoreBatchRequest, ScoreBatchResponse, VocabResponse, WireTriple,
    PROTOCOL_VERSION, VOCAB_PAGE,
};
use super::{Embedding, MetricBackend, Triple};
use crate::error::{Error, Result};

pub struct LoopbackServer {
    server: Arc<Server>,
    url: String,
    workers: Vec<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Binds an ephemeral port on 127.0.0.1 and serves `backend` from `threads` workers.
    pub fn start(backend: Arc<dyn MetricBackend>, threads: usize) -> Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::Connection {
            endpoint: "127.0.0.1:0".into(),
            message: e.to_string(),
        })?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Config("loopback server has no IP address".into()))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(backend.as_ref(), request);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            url: format!("http://127.0.0.1:{port}"),
            workers,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

struct Reply {
    status: u16,
    body: String,
}

fn ok<T: Serialize>(value: &T) -> Reply {
    match serde_json::to_string(value) {
        Ok(body) => Reply { status: 200, body },
        Err(e) => fail(500, e.to_string()),
    }
}

fn fail(status: u16, message: impl Into<String>) -> Reply {
    let body = serde_json::to_string(&ErrorResponse {
        error: message.into(),
    })
    .unwrap_or_else(|_| "{\"error\":\"unserializable error\"}".into());
    Reply { status, body }
}

fn from_error(e: Error) -> Reply {
    match e {
        Error::GradientUnsupported { .. } => fail(404, e.to_string()),
        Error::InvalidToken { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::Config(_) => fail(400, e.to_string()),
        other => fail(500, other.to_string()),
    }
}

fn handle(backend: &dyn MetricBackend, mut request: Request) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let mut body = String::new();
    let reply = if let Err(e) = request.as_reader().read_to_string(&mut body) {
        fail(400, format!("unreadable body: {e}"))
    } else {
        match (request.method(), path) {
            (Method::Get, "/info") => info(backend),
            (Method::Get, "/vocab") => vocab(backend, query),
            (Method::Post, "/embed") => with_body(&body, |req: EmbedRequest| embed(backend, req)),
            (Method::Post, "/score_batch") => {
                with_body(&body, |req: ScoreBatchRequest| score_batch(backend, req))
            }
            (Method::Post, "/grad") => with_body(&body, |req: WireTriple| grad(backend, req)),
            (Method::Post, "/detokenize") => {
                with_body(&body, |req: DetokenizeRequest| {
                    match backend.detokenize(&req.token_ids) {
                        Ok(text) => ok(&DetokenizeResponse { text }),
                        Err(e) => from_error(e),
                    }
                })
            }
            _ => fail(404, format!("no route for {} {path}", request.method())),
        }
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    let _ = request.respond(response);
}

fn with_body<T: serde::de::DeserializeOwned>(body: &str, f: impl FnOnce(T) -> Reply) -> Reply {
    match serde_json::from_str(body) {
        Ok(req) => f(req),
        Err(e) => fail(400, format!("malformed request: {e}")),
    }
}

fn info(backend: &dyn MetricBackend) -> Reply {
    let info = backend.info();
    ok(&InfoResponse {
        name: info.name.clone(),
        dim: info.dim,
        vocab_size: info.vocab_size,
        supports_gradient: info.supports_gradient,
        score_range: info.score_range,
        protocol_version: PROTOCOL_VERSION,
    })
}

fn vocab(backend: &dyn MetricBackend, query: &str) -> Reply {
    let mut offset = 0usize;
    let mut limit = VOCAB_PAGE;
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
        let Ok(value) = value.parse::<usize>() else {
            return fail(400, format!("invalid query parameter {pair}"));
        };
        match key {
            "offset" => offset = value,
            "limit" => limit = value,
            _ => {}
        }
    }
    let tokens = backend.vocabulary().tokens();
    let start = offset.min(tokens.len());
    let end = offset.saturating_add(limit).min(tokens.len());
    ok(&VocabResponse {
        tokens: tokens[start..end].to_vec(),
        offset,
    })
}

fn embed(backend: &dyn MetricBackend, req: EmbedRequest) -> Reply {
    match backend.embed_batch(&req.token_ids) {
        Ok(embs) => ok(&EmbedResponse {
            embeddings: embs.into_iter().map(Embedding::into_vec).collect(),
        }),
        Err(e) => from_error(e),
    }
}

fn to_embeddings(t: WireTriple) -> Result<[Embedding; 3]> {
    Ok([
        Embedding::new(t.src)?,
        Embedding::new(t.hyp)?,
        Embedding::new(t.reference)?,
    ])
}

fn score_batch(backend: &dyn MetricBackend, req: ScoreBatchRequest) -> Reply {
    let owned = match req
        .triples
        .into_iter()
        .map(to_embeddings)
        .collect::<Result<Vec<_>>>()
    {
        Ok(v) => v,
        Err(e) => return from_error(e),
    };
    let triples: Vec<Triple<'_>> = owned
        .iter()
        .map(|[src, hyp, reference]| Triple {
            src,
            hyp,
            reference,
        })
        .collect();
    match backend.score_batch(&triples) {
        Ok(scores) => ok(&ScoreBatchResponse { scores }),
        Err(e) => from_error(e),
    }
}

fn grad(backend: &dyn MetricBackend, req: WireTriple) -> Reply {
    if !backend.info().supports_gradient {
        return fail(404, "gradient not supported");
    }
    let result =
        to_embeddings(req).and_then(|[src, hyp, reference]| backend.grad(&src, &hyp, &reference));
    match result {
        Ok(g) => ok(&GradResponse { grad: g.into_vec() }),
        Err(e) => from_error(e),
    }
}
