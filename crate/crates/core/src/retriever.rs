//! Dual-encoder abstraction, cosine similarity, and exhaustive top-k retrieval.
//!
//! The shipped offline embedder is a hashed bag-of-tokens encoder: every
//! token is hashed into one of `dim` buckets with weight `1 + ln(tf)`, then
//! the vector is L2-normalized. It is deterministic under a fixed seed and
//! preserves "lexical overlap implies higher similarity", which is all the
//! attack loop needs from relevance.

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSnapshot;
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedRole {
    Query,
    Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity in [-1, 1]. Two zero vectors are defined to have
/// similarity 0.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str, role: EmbedRole) -> Result<EmbeddingVector>;
}

/// Deterministic hashed bag-of-tokens embedder.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl OfflineEmbedder {
    pub fn new(dim: usize, seed: u64) -> OfflineEmbedder {
        OfflineEmbedder { dim, seed }
    }

    fn bucket(&self, token: &str) -> usize {
        // FNV-1a, mixed with the configured seed.
        let mut h: u64 = 0xcbf29ce484222325 ^ self.seed.wrapping_mul(0x9e3779b97f4a7c15);
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        (h % self.dim as u64) as usize
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        OfflineEmbedder::new(DEFAULT_DIM, 0)
    }
}

impl Embedder for OfflineEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, _role: EmbedRole) -> Result<EmbeddingVector> {
        let mut counts = std::collections::HashMap::new();
        for token in tokenize(text) {
            *counts.entry(token).or_insert(0u64) += 1;
        }
        let mut values = vec![0.0; self.dim];
        for (token, tf) in counts {
            values[self.bucket(&token)] += 1.0 + (tf as f64).ln();
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Ok(EmbeddingVector { values })
    }
}

/// Wire types for the embedding-service protocol.
#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: Vec<&'a str>,
    role: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Embedder backed by an HTTP embedding service.
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout_s: u64) -> Result<RemoteEmbedder> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_s))
            .build()
            .map_err(|e| Error::RemoteTransport(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            dim,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, role: EmbedRole) -> Result<EmbeddingVector> {
        let role = match role {
            EmbedRole::Query => "query",
            EmbedRole::Document => "document",
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest {
                input: vec![text],
                role,
            })
            .send()
            .map_err(|e| Error::RemoteTransport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::RemoteStatus(status.as_u16()));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Error::RemoteTransport(e.to_string()))?;
        let values = body
            .embeddings
            .into_iter()
            .next()
            .ok_or_else(|| Error::RemoteTransport("empty embeddings array".into()))?;
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch(values.len(), self.dim));
        }
        Ok(EmbeddingVector { values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

impl RetrievalResult {
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.ranked.iter().position(|(id, _)| id == doc_id).map(|p| p + 1)
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Pre-computed document embeddings over one corpus snapshot.
/// Immutable after build; `with_document` yields an extended copy.
pub struct Index<'e> {
    embedder: &'e dyn Embedder,
    entries: Vec<(String, EmbeddingVector)>,
}

impl Clone for Index<'_> {
    fn clone(&self) -> Self {
        Index {
            embedder: self.embedder,
            entries: self.entries.clone(),
        }
    }
}

impl<'e> Index<'e> {
    pub fn build(embedder: &'e dyn Embedder, snapshot: &CorpusSnapshot) -> Result<Index<'e>> {
        let mut entries = Vec::with_capacity(snapshot.len());
        for doc in snapshot.documents() {
            entries.push((doc.id.clone(), embedder.embed(&doc.text, EmbedRole::Document)?));
        }
        Ok(Index { embedder, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Incremental add: equivalent to a full rebuild over the injected
    /// snapshot.
    pub fn with_document(&self, doc_id: &str, text: &str) -> Result<Index<'e>> {
        let mut entries = self.entries.clone();
        entries.push((doc_id.to_string(), self.embedder.embed(text, EmbedRole::Document)?));
        Ok(Index {
            embedder: self.embedder,
            entries,
        })
    }

    /// Top-k by cosine similarity, descending; ties broken by ascending
    /// doc id. If k exceeds the corpus size all documents are returned.
    pub fn retrieve(&self, query_id: &str, query: &str, k: usize) -> Result<RetrievalResult> {
        let qvec = self.embedder.embed(query, EmbedRole::Query)?;
        let mut scored: Vec<(String, f64)> = Vec::with_capacity(self.entries.len());
        for (id, dvec) in &self.entries {
            scored.push((id.clone(), similarity(&qvec, dvec)?));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(RetrievalResult {
            query_id: query_id.to_string(),
            ranked: scored,
            k,
        })
    }
}
