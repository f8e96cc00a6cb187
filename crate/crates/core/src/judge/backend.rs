use serde::{Deserialize, Serialize};

use super::EndpointConfig;
use crate::error::Result;

/// One chat-style request as handed to a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template: String,
    /// Lookup key for the stub backend; ignored by live backends.
    pub stub_key: String,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatOutput {
    pub text: String,
    pub usage: Usage,
}

/// Something that can answer chat requests and embed text.
pub trait Backend: Send + Sync {
    fn chat(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<ChatOutput>;

    /// Raw (not necessarily normalized) vectors, one per input text.
    fn embed(&self, endpoint: &EndpointConfig, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    /// True when the backend performs network calls.
    fn is_live(&self) -> bool;
}
