//! The single gateway for model inference.
//!
//! [`JudgeClient::complete`] renders a registered prompt template, serves it from the
//! response cache when possible, otherwise asks the configured [`Backend`], validates the
//! reply against the template schema (with one repair re-prompt) and caches it.
//! [`JudgeClient::embed`] returns unit-normalized embedding vectors.

mod backend;
mod cache;
mod live;
pub mod prompts;
pub mod schema;
mod stub;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use backend::{Backend, ChatOutput, ChatRequest, Usage};
pub use cache::{content_key, ResponseCache};
pub use live::{ConcurrencyGate, LiveBackend, RateLimiter, RetryPolicy};
pub use prompts::{names, PromptRegistry, PromptTemplate};
pub use schema::{extract_json, Field, Schema};
pub use stub::{CannedResponse, PinnedVector, StubBackend, StubFixtures, FALLBACK_KEY};

use crate::error::{Error, Result};

/// Connection and decoding settings for one judge task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key; the key itself never appears
    /// in configuration.
    pub api_key_env: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub extra_params: BTreeMap<String, Value>,
    pub requests_per_minute: u32,
    pub max_concurrency: u32,
}

impl EndpointConfig {
    fn openai(model: &str, max_output_tokens: u32, temperature: f64) -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model_name: model.into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_output_tokens,
            temperature,
            extra_params: BTreeMap::new(),
            requests_per_minute: 500,
            max_concurrency: 8,
        }
    }

    /// Default endpoint for a judge task. Model names mirror the reference setup; override
    /// them in configuration.
    pub fn preset(task: &str) -> Option<Self> {
        let mut reasoning = BTreeMap::new();
        reasoning.insert("reasoning_effort".to_string(), json!("medium"));
        reasoning.insert("verbosity".to_string(), json!("medium"));
        Some(match task {
            "parse" => Self::openai("gpt-4.1-2025-04-14", 10240, 0.7),
            "corrupt" | "verify" | "quality" => EndpointConfig {
                extra_params: reasoning,
                ..Self::openai("gpt-5-mini-2025-08-07", 4096, 1.0)
            },
            "match" => Self::openai("gpt-5.2-2025-12-11", 8192, 1.0),
            "predict" => EndpointConfig {
                base_url: "http://localhost:8000/v1".into(),
                api_key_env: "PREDICTOR_API_KEY".into(),
                ..Self::openai("author-response-predictor", 1024, 0.0)
            },
            "embed" => Self::openai("text-embedding-3-small", 0, 0.0),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency < 1 {
            return Err(Error::Config(format!(
                "endpoint {}: max_concurrency must be at least 1",
                self.model_name
            )));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "endpoint {}: temperature must be nonnegative",
                self.model_name
            )));
        }
        if self.requests_per_minute < 1 {
            return Err(Error::Config(format!(
                "endpoint {}: requests_per_minute must be at least 1",
                self.model_name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub raw_text: String,
    pub parsed: Value,
    pub usage: Usage,
    pub cache_hit: bool,
    /// `template@vN` of the prompt that produced this response.
    pub prompt_version: String,
}

impl JudgeResponse {
    /// Audit line for this call; `subject` names what was judged.
    pub fn audit(&self, template: &str, subject: impl Into<String>) -> CallAudit {
        CallAudit {
            template: template.to_string(),
            prompt_version: self.prompt_version.clone(),
            subject: subject.into(),
            cache_hit: self.cache_hit,
            usage: self.usage,
        }
    }
}

/// One judge call in an audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallAudit {
    pub template: String,
    pub prompt_version: String,
    pub subject: String,
    pub cache_hit: bool,
    pub usage: Usage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedChat {
    template: String,
    prompt_version: String,
    model_name: String,
    raw_text: String,
    parsed: Value,
    usage: Usage,
}

#[derive(Clone)]
pub struct JudgeClient {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<ResponseCache>>,
    registry: PromptRegistry,
}

impl JudgeClient {
    pub fn new(backend: Arc<dyn Backend>, registry: PromptRegistry) -> Self {
        JudgeClient {
            backend,
            cache: None,
            registry,
        }
    }

    /// Stub backend, builtin prompts and an in-memory cache.
    pub fn stub(backend: StubBackend) -> Self {
        Self::new(Arc::new(backend), PromptRegistry::builtin())
            .with_cache(Arc::new(ResponseCache::in_memory()))
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn registry(&self) -> &PromptRegistry {
        &self.registry
    }

    pub fn is_live(&self) -> bool {
        self.backend.is_live()
    }

    /// Renders `template`, then serves the response from cache or the backend.
    ///
    /// `stub_key` identifies the request to the stub backend and should be canonical for
    /// the inputs (e.g. sorted unit ids), so that equivalent requests share canned answers.
    pub fn complete(
        &self,
        endpoint: &EndpointConfig,
        template: &str,
        bindings: &BTreeMap<String, String>,
        stub_key: &str,
    ) -> Result<JudgeResponse> {
        let template = self.registry.get(template)?;
        let schema_text = serde_json::to_string(&template.response_schema.describe())?;
        let user = format!(
            "{}\n\nThe response must satisfy this JSON schema:\n{schema_text}",
            template.render(bindings)?
        );
        let prompt_version = template.version_tag();
        let key = content_key(&json!({
            "template": template.name,
            "version": template.version,
            "system": template.system_text,
            "user": user,
            "model": endpoint.model_name,
            "temperature": endpoint.temperature,
            "max_output_tokens": endpoint.max_output_tokens,
            "extra_params": endpoint.extra_params,
        }));
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get::<CachedChat>(&key)? {
                return Ok(JudgeResponse {
                    raw_text: hit.raw_text,
                    parsed: hit.parsed,
                    usage: hit.usage,
                    cache_hit: true,
                    prompt_version,
                });
            }
        }

        let mut request = ChatRequest {
            template: template.name.clone(),
            stub_key: stub_key.to_string(),
            system: template.system_text.clone(),
            user: user.clone(),
        };
        let first = self.backend.chat(endpoint, &request)?;
        let (output, parsed) = match validated(&template.response_schema, &first.text) {
            Ok(v) => (first, v),
            Err(problem) => {
                request.user = format!(
                    "{user}\n\nYour previous answer was rejected: {problem}. \
                     Answer again with JSON that satisfies the schema."
                );
                let second = self.backend.chat(endpoint, &request)?;
                match validated(&template.response_schema, &second.text) {
                    Ok(v) => (second, v),
                    Err(problem) => {
                        return Err(Error::JudgeFormat {
                            template: template.name.clone(),
                            message: problem,
                            raw_text: second.text,
                        })
                    }
                }
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedChat {
                    template: template.name.clone(),
                    prompt_version: prompt_version.clone(),
                    model_name: endpoint.model_name.clone(),
                    raw_text: output.text.clone(),
                    parsed: parsed.clone(),
                    usage: output.usage,
                },
            )?;
        }
        Ok(JudgeResponse {
            raw_text: output.text,
            parsed,
            usage: output.usage,
            cache_hit: false,
            prompt_version,
        })
    }

    /// One L2-normalized vector per text, all of the same dimension.
    pub fn embed(&self, endpoint: &EndpointConfig, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Embedding("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Embedding(format!("text {i} is empty")));
        }
        let keys: Vec<String> = texts
            .iter()
            .map(|t| content_key(&json!({"embed": endpoint.model_name, "text": t})))
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        if let Some(cache) = &self.cache {
            for (slot, key) in out.iter_mut().zip(&keys) {
                *slot = cache.get::<Vec<f64>>(key)?;
            }
        }
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.backend.embed(endpoint, &batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Embedding(format!(
                    "backend returned {} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            for (&i, v) in missing.iter().zip(vectors) {
                if let Some(cache) = &self.cache {
                    cache.put(&keys[i], &v)?;
                }
                out[i] = Some(v);
            }
        }
        let out: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
        let dim = out[0].len();
        if out.iter().any(|v| v.len() != dim) {
            return Err(Error::Embedding(
                "embedding dimensions differ within a batch".into(),
            ));
        }
        out.into_iter().map(normalize).collect()
    }
}

/// Unit vectors keyed by exact text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextVectors(BTreeMap<String, Vec<f64>>);

impl TextVectors {
    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) {
        self.0.insert(text.into(), vector);
    }

    pub fn get(&self, text: &str) -> Result<&[f64]> {
        self.0
            .get(text)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Embedding(format!("no vector for text `{text}`")))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        cosine(self.get(a)?, self.get(b)?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl JudgeClient {
    /// Embeds the distinct texts among `texts` in one batch.
    pub fn embed_table<'a>(
        &self,
        endpoint: &EndpointConfig,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<TextVectors> {
        let unique: Vec<String> = texts
            .into_iter()
            .map(str::to_string)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = TextVectors::default();
        if unique.is_empty() {
            return Ok(out);
        }
        let vectors = self.embed(endpoint, &unique)?;
        for (t, v) in unique.into_iter().zip(vectors) {
            out.insert(t, v);
        }
        Ok(out)
    }
}

fn validated(schema: &Schema, raw: &str) -> std::result::Result<Value, String> {
    let v = extract_json(raw)?;
    schema.validate(&v)?;
    Ok(v)
}

pub fn normalize(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Embedding("cannot normalize a zero vector".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Embedding(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Embedding("cosine of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
