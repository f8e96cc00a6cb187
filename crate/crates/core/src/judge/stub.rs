//! Deterministic offline backend.
//!
//! Chat requests are answered from canned responses keyed by `(template, stub_key)`, with
//! an optional per-template fallback under the key `*`. Embeddings come from feature
//! hashing of lowercase word tokens, so texts sharing vocabulary get higher cosine, unless a
//! fixture pins an explicit vector for the exact text.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{Backend, ChatOutput, ChatRequest, Usage};
use super::EndpointConfig;
use crate::error::{Error, Result};

pub const DEFAULT_STUB_DIMENSION: usize = 256;
pub const FALLBACK_KEY: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedResponse {
    pub template: String,
    pub key: String,
    /// A JSON string is returned verbatim as raw text, anything else is serialized.
    pub response: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedVector {
    pub text: String,
    pub vector: Vec<f64>,
}

/// On-disk stub fixture format.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubFixtures {
    #[serde(default)]
    pub responses: Vec<CannedResponse>,
    #[serde(default)]
    pub embedding_dimension: Option<usize>,
    #[serde(default)]
    pub embeddings: Vec<PinnedVector>,
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    responses: HashMap<(String, String), Value>,
    pinned: HashMap<String, Vec<f64>>,
    dimension: usize,
}

impl Default for StubBackend {
    fn default() -> Self {
        StubBackend::new(StubFixtures::default()).expect("empty fixtures are valid")
    }
}

impl StubBackend {
    pub fn new(fixtures: StubFixtures) -> Result<Self> {
        let dimension = fixtures
            .embedding_dimension
            .unwrap_or(DEFAULT_STUB_DIMENSION);
        let mut pinned = HashMap::new();
        for p in fixtures.embeddings {
            if p.vector.len() != dimension {
                return Err(Error::Embedding(format!(
                    "pinned vector for {:?} has dimension {}, expected {dimension}",
                    p.text,
                    p.vector.len()
                )));
            }
            pinned.insert(p.text, p.vector);
        }
        let responses = fixtures
            .responses
            .into_iter()
            .map(|c| ((c.template, c.key), c.response))
            .collect();
        Ok(StubBackend {
            responses,
            pinned,
            dimension,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn with_response(mut self, template: &str, key: &str, response: Value) -> Self {
        self.responses
            .insert((template.to_string(), key.to_string()), response);
        self
    }

    pub fn with_vector(mut self, text: &str, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.dimension, "pinned vector dimension");
        self.pinned.insert(text.to_string(), vector);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Bag-of-words feature hashing into `dimension` buckets with hashed signs.
    pub fn hash_embedding(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        let add = |v: &mut Vec<f64>, tok: &str| {
            let h = fnv1a(tok.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        };
        if tokens.is_empty() {
            add(&mut v, text);
        }
        for t in &tokens {
            add(&mut v, t);
        }
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Backend for StubBackend {
    fn chat(&self, _endpoint: &EndpointConfig, request: &ChatRequest) -> Result<ChatOutput> {
        let exact = (request.template.clone(), request.stub_key.clone());
        let fallback = (request.template.clone(), FALLBACK_KEY.to_string());
        let value = self
            .responses
            .get(&exact)
            .or_else(|| self.responses.get(&fallback))
            .ok_or_else(|| {
                Error::Config(format!(
                    "stub backend has no canned response for template `{}` key `{}`",
                    request.template, request.stub_key
                ))
            })?;
        let text = match value {
            Value::String(s) => s.clone(),
            other => serde_json::to_string(other)?,
        };
        Ok(ChatOutput {
            usage: Usage {
                prompt_tokens: (request.system.len() + request.user.len()) as u64 / 4,
                completion_tokens: text.len() as u64 / 4,
            },
            text,
        })
    }

    fn embed(&self, _endpoint: &EndpointConfig, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                self.pinned
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| self.hash_embedding(t))
            })
            .collect())
    }

    fn is_live(&self) -> bool {
        false
    }
}
