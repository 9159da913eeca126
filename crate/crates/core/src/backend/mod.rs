//! Vision-language model access.
//!
//! [`ModelBackend`] turns one image plus a message sequence into text. Two
//! implementations ship: [`HttpBackend`] for OpenAI-compatible chat
//! completion servers and [`ScriptedBackend`], a deterministic fixture
//! replayer that records every request it sees.

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod http;
mod image;
mod mock;
mod template;

pub use http::{HttpBackend, HttpBackendConfig};
pub use image::{encode_image_bytes, encode_image_path, sniff_media_type, ImageError, ImagePayload, ImageSource};
pub use mock::{ANY_SAMPLE, CapturedRequest, FixtureEntry, FixtureError, FixtureKey, FixtureResponse, ScriptedBackend, ScriptedFixture};
pub use template::{
    Bindings, MemoryEntry, Rendered, TemplateBundle, TemplateError, TemplateName, ANSWER_MARKER, COT_MARKER,
    NO_MEMORY_PLACEHOLDER, NO_PLAN_SENTINEL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Initial,
    Reflect,
    Refine,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Initial => "initial",
            CallKind::Reflect => "reflect",
            CallKind::Refine => "refine",
        }
    }
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies which step of which episode issued a request. Never sent over
/// the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub sample_id: String,
    pub kind: CallKind,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }
}

/// Sampling settings, shared by every call of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            seed: Some(0),
        }
    }
}

/// One image, a nonempty message list, and generation settings.
#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub image: Arc<ImageSource>,
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    pub tag: CallTag,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::InvalidRequest("request has no user message".into()));
        }
        Ok(())
    }

    /// Stable hex digest of everything that reaches the model.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            image: &'a str,
            messages: &'a [Message],
            params: &'a GenerationParams,
        }
        let image = self.image.digest();
        let canon = Canon { image: &image, messages: &self.messages, params: &self.params };
        let bytes = serde_json::to_vec(&canon).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    /// Transient failures retried before this response arrived.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("no fixture entry for {sample_id}/{kind}@{iteration}")]
    FixtureMiss { sample_id: String, kind: CallKind, iteration: u32 },
}

#[async_trait]
pub trait ModelBackend: Send + Sync {
    async fn generate(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;

    /// Short human-readable identity for run metadata.
    fn describe(&self) -> String;
}

#[async_trait]
impl<T: ModelBackend + ?Sized> ModelBackend for Arc<T> {
    async fn generate(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).generate(request).await
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}
