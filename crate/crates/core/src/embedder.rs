//! Text embedding providers.
//!
//! Two providers sit behind [`EmbedderSpec`]:
//!
//! * a deterministic signed feature-hashing embedder ([`hash_embed`]) that
//!   needs no model files, and
//! * a client for an external embedding service speaking the JSON wire
//!   protocol below, used to plug in real pretrained sentence and code
//!   encoders.
//!
//! Wire protocol:
//!
//! ```text
//! POST {endpoint}/embed   {"model": str, "texts": [str, ...]}
//!   200 {"dim": int, "vectors": [[float, ...], ...]}
//!   400 / 422 / 500 {"error": str}
//! GET  {endpoint}/health
//!   200 {"status": "ok", "models": [str, ...]}
//! ```

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::hashing::seeded_hash;
use crate::{Error, Result};

/// Responses larger than this are rejected without being parsed.
pub const MAX_RESPONSE_BYTES: u64 = 64 * 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Added to the seed to derive the sign hash from the bucket hash.
const SIGN_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderSpec {
    Hash {
        dim: usize,
        seed: u64,
    },
    External {
        endpoint: String,
        model_name: String,
        dim: usize,
        timeout: Duration,
    },
}

impl EmbedderSpec {
    pub fn hash(dim: usize, seed: u64) -> Self {
        EmbedderSpec::Hash { dim, seed }
    }

    pub fn external(endpoint: impl Into<String>, model_name: impl Into<String>, dim: usize) -> Self {
        EmbedderSpec::External {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            dim,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hash { dim, .. } | EmbedderSpec::External { dim, .. } => *dim,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, EmbedderSpec::External { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidConfig("embedder dim must be at least 1".into()));
        }
        if let EmbedderSpec::External { endpoint, .. } = self {
            reqwest::Url::parse(endpoint)
                .map_err(|e| Error::InvalidConfig(format!("bad endpoint {endpoint:?}: {e}")))?;
        }
        Ok(())
    }
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing.
///
/// Each token adds `±1` to bucket `h1(token) mod dim`, where
/// `h1 = seeded_hash(token, seed)` and the sign is `+1` when the top bit of
/// `h2 = seeded_hash(token, seed + 0x9e3779b97f4a7c15)` is clear. The sum is
/// L2-normalized; text without tokens (or whose contributions cancel) yields
/// the zero vector.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 1, "hash_embed requires dim >= 1");
    let mut acc = vec![0f64; dim];
    let sign_seed = seed.wrapping_add(SIGN_SEED_OFFSET);
    for token in tokenize(text) {
        let bucket = (seeded_hash(&token, seed) % dim as u64) as usize;
        let sign = if seeded_hash(&token, sign_seed) >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        vec![0.0; dim]
    }
}

/// Texts with their vectors, one row per text.
#[derive(Debug, Clone)]
pub struct EmbedBatch {
    pub texts: Vec<String>,
    pub vectors: EmbeddingMatrix,
}

pub fn embed_batch<S: AsRef<str>>(spec: &EmbedderSpec, texts: &[S]) -> Result<EmbedBatch> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("cannot embed an empty batch".into()));
    }
    spec.validate()?;
    let vectors = match spec {
        EmbedderSpec::Hash { dim, seed } => {
            let mut data = Vec::with_capacity(texts.len() * dim);
            for t in texts {
                data.extend(hash_embed(t.as_ref(), *dim, *seed));
            }
            EmbeddingMatrix::new(*dim, data)?
        }
        EmbedderSpec::External {
            endpoint,
            model_name,
            dim,
            timeout,
        } => ExternalEmbedder::new(endpoint, model_name, *dim, *timeout)?.embed(texts)?,
    };
    Ok(EmbedBatch {
        texts: texts.iter().map(|t| t.as_ref().to_string()).collect(),
        vectors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub models: Vec<String>,
}

/// Blocking client for one model on an embedding service.
///
/// Must not be created or dropped on an async runtime thread; wrap calls in
/// `spawn_blocking` when used from async code.
pub struct ExternalEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    dim: usize,
}

impl ExternalEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Connection(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            dim,
        })
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let resp = self
            .client
            .get(format!("{}/health", self.endpoint))
            .send()
            .map_err(|e| Error::Connection(e.to_string()))?;
        let body = read_capped(resp)?;
        serde_json::from_slice(&body).map_err(|e| Error::Protocol(format!("bad health body: {e}")))
    }

    /// One request for the whole batch. The response must hold exactly one
    /// finite vector of the configured dim per text.
    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<EmbeddingMatrix> {
        let request = EmbedRequest {
            model: self.model.clone(),
            texts: texts.iter().map(|t| t.as_ref().to_string()).collect(),
        };
        let resp = self
            .client
            .post(format!("{}/embed", self.endpoint))
            .json(&request)
            .send()
            .map_err(|e| Error::Connection(e.to_string()))?;
        let body = read_capped(resp)?;
        let parsed: EmbedResponse = serde_json::from_slice(&body)
            .map_err(|e| Error::Protocol(format!("bad embed body: {e}")))?;

        if parsed.dim != self.dim {
            return Err(Error::RemoteDimMismatch {
                expected: self.dim,
                found: parsed.dim,
            });
        }
        if parsed.vectors.len() != texts.len() {
            return Err(Error::RemoteCountMismatch {
                expected: texts.len(),
                found: parsed.vectors.len(),
            });
        }
        if let Some(v) = parsed.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(Error::RemoteDimMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let data: Vec<f32> = parsed.vectors.into_iter().flatten().collect();
        EmbeddingMatrix::new(self.dim, data)
            .map_err(|e| Error::Protocol(format!("invalid vectors: {e}")))
    }
}

fn read_capped(resp: reqwest::blocking::Response) -> Result<Vec<u8>> {
    let status = resp.status();
    let mut body = Vec::new();
    resp.take(MAX_RESPONSE_BYTES + 1)
        .read_to_end(&mut body)
        .map_err(|e| Error::Connection(e.to_string()))?;
    if body.len() as u64 > MAX_RESPONSE_BYTES {
        return Err(Error::Protocol(format!(
            "response exceeds {MAX_RESPONSE_BYTES} bytes"
        )));
    }
    if !status.is_success() {
        let message = serde_json::from_slice::<ErrorBody>(&body)
            .map(|b| b.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        return Err(Error::HttpStatus {
            status: status.as_u16(),
            message,
        });
    }
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn empty_text_is_zero() {
        assert_eq!(hash_embed("", 8, 0), vec![0.0; 8]);
        assert_eq!(hash_embed("  -- ++ ", 8, 0), vec![0.0; 8]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(hash_embed("add two numbers", 32, 9), hash_embed("add two numbers", 32, 9));
        assert_ne!(hash_embed("add two numbers", 32, 9), hash_embed("add two numbers", 32, 10));
    }

    #[test]
    fn tokenization_lowercases_and_splits() {
        let toks: Vec<_> = tokenize("getUser_by-ID(x2)").collect();
        assert_eq!(toks, ["getuser", "by", "id", "x2"]);
        assert_eq!(hash_embed("Sort LIST", 64, 1), hash_embed("sort-list", 64, 1));
    }

    #[test]
    fn unit_norm_for_single_token() {
        let v = hash_embed("socket", 16, 3);
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-6);
        assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn token_overlap_beats_disjoint() {
        let list = hash_embed("sort list", 256, 0);
        let array = hash_embed("sort array", 256, 0);
        let socket = hash_embed("open socket", 256, 0);
        assert!(cosine(&list, &array) > cosine(&list, &socket));
    }

    #[test]
    fn batch_matches_single() {
        let spec = EmbedderSpec::hash(16, 5);
        let texts = ["a b", "c", "read file lines"];
        let b = embed_batch(&spec, &texts).unwrap();
        assert_eq!(b.vectors.count(), 3);
        assert_eq!(b.vectors.dim(), 16);
        for (i, t) in texts.iter().enumerate() {
            assert_eq!(b.vectors.row(i), hash_embed(t, 16, 5).as_slice());
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let texts: [&str; 0] = [];
        assert!(embed_batch(&EmbedderSpec::hash(4, 0), &texts).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(EmbedderSpec::hash(0, 0).validate().is_err());
        assert!(EmbedderSpec::external("not a url", "m", 8).validate().is_err());
        assert!(EmbedderSpec::external("http://127.0.0.1:1", "m", 8).validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unit_norm_when_tokens_present(words in proptest::collection::vec("[a-z]{1,8}", 1..12), dim in 1usize..64, seed: u64) {
                let text = words.join(" ");
                let v = hash_embed(&text, dim, seed);
                let n = cosine(&v, &v);
                // Signed contributions can cancel exactly, which gives the zero vector.
                prop_assert!((n - 1.0).abs() < 1e-6 || n == 0.0);
            }

            #[test]
            fn batch_is_order_equivariant(words in proptest::collection::vec("[a-z ]{0,20}", 1..8), seed: u64) {
                let spec = EmbedderSpec::hash(24, seed);
                let fwd = embed_batch(&spec, &words).unwrap();
                let mut rev = words.clone();
                rev.reverse();
                let back = embed_batch(&spec, &rev).unwrap();
                let n = words.len();
                for i in 0..n {
                    prop_assert_eq!(fwd.vectors.row(i), back.vectors.row(n - 1 - i));
                }
            }
        }
    }
}
