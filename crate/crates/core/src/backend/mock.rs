//! Deterministic backend that replays canned responses.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, CallKind, CallTag, GenerationParams, Message, ModelBackend, ModelRequest, ModelResponse};

/// Matches any sample id.
pub const ANY_SAMPLE: &str = "*";

/// Lookup key. `iteration: None` matches every iteration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FixtureKey {
    pub sample_id: String,
    pub kind: CallKind,
    pub iteration: Option<u32>,
}

impl FixtureKey {
    pub fn new(sample_id: impl Into<String>, kind: CallKind, iteration: u32) -> Self {
        Self { sample_id: sample_id.into(), kind, iteration: Some(iteration) }
    }

    pub fn any_iteration(sample_id: impl Into<String>, kind: CallKind) -> Self {
        Self { sample_id: sample_id.into(), kind, iteration: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureResponse {
    Text(String),
    Fail(BackendError),
}

/// One line of a JSONL fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub sample_id: String,
    pub kind: CallKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Injected failure message. With `status` it becomes an HTTP error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Canned responses keyed by (sample, call kind, iteration).
#[derive(Debug, Clone, Default)]
pub struct ScriptedFixture {
    entries: HashMap<FixtureKey, FixtureResponse>,
}

impl ScriptedFixture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same three responses for every sample and iteration.
    pub fn constant(initial: &str, reflect: &str, refine: &str) -> Self {
        Self::new()
            .with(FixtureKey::any_iteration(ANY_SAMPLE, CallKind::Initial), initial)
            .with(FixtureKey::any_iteration(ANY_SAMPLE, CallKind::Reflect), reflect)
            .with(FixtureKey::any_iteration(ANY_SAMPLE, CallKind::Refine), refine)
    }

    pub fn with(mut self, key: FixtureKey, text: impl Into<String>) -> Self {
        self.insert(key, FixtureResponse::Text(text.into()));
        self
    }

    pub fn with_failure(mut self, key: FixtureKey, error: BackendError) -> Self {
        self.insert(key, FixtureResponse::Fail(error));
        self
    }

    pub fn insert(&mut self, key: FixtureKey, response: FixtureResponse) {
        self.entries.insert(key, response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact key first, then the same sample at any iteration, then the
    /// wildcard sample with and without the iteration.
    pub fn lookup(&self, tag: &CallTag) -> Option<&FixtureResponse> {
        let probes = [
            FixtureKey::new(tag.sample_id.clone(), tag.kind, tag.iteration),
            FixtureKey::any_iteration(tag.sample_id.clone(), tag.kind),
            FixtureKey::new(ANY_SAMPLE, tag.kind, tag.iteration),
            FixtureKey::any_iteration(ANY_SAMPLE, tag.kind),
        ];
        probes.iter().find_map(|k| self.entries.get(k))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Result<Self, FixtureError> {
        let mut fixture = Self::new();
        for (i, e) in entries.into_iter().enumerate() {
            let line = i + 1;
            let key = FixtureKey { sample_id: e.sample_id, kind: e.kind, iteration: e.iteration };
            let response = match (e.response, e.error) {
                (Some(text), None) => FixtureResponse::Text(text),
                (None, Some(message)) => FixtureResponse::Fail(match e.status {
                    Some(status) => BackendError::Http { status, attempts: 1, body: message },
                    None => BackendError::Transport { attempts: 1, message },
                }),
                _ => {
                    return Err(FixtureError::Invalid {
                        line,
                        message: "exactly one of \"response\" and \"error\" is required".into(),
                    })
                }
            };
            fixture.insert(key, response);
        }
        Ok(fixture)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, FixtureError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(raw)
                .map_err(|e| FixtureError::Invalid { line: i + 1, message: e.to_string() })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| FixtureError::Io { path: path.display().to_string(), source })?;
        Self::parse_jsonl(&text)
    }
}

/// A request as the mock saw it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapturedRequest {
    pub tag: CallTag,
    pub image_digest: String,
    pub messages: Vec<Message>,
    pub params: GenerationParams,
}

impl CapturedRequest {
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == super::Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    fixture: ScriptedFixture,
    captured: Mutex<Vec<CapturedRequest>>,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Self {
        Self { fixture, captured: Mutex::new(Vec::new()) }
    }

    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.captured.lock().expect("capture log poisoned").clone()
    }

    /// Requests of one episode, in issue order.
    pub fn captured_for(&self, sample_id: &str) -> Vec<CapturedRequest> {
        self.captured
            .lock()
            .expect("capture log poisoned")
            .iter()
            .filter(|c| c.tag.sample_id == sample_id)
            .cloned()
            .collect()
    }

    pub fn call_count(&self) -> usize {
        self.captured.lock().expect("capture log poisoned").len()
    }

    pub fn clear(&self) {
        self.captured.lock().expect("capture log poisoned").clear();
    }
}

#[async_trait]
impl ModelBackend for ScriptedBackend {
    async fn generate(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        self.captured.lock().expect("capture log poisoned").push(CapturedRequest {
            tag: request.tag.clone(),
            image_digest: request.image.digest(),
            messages: request.messages.clone(),
            params: request.params.clone(),
        });
        match self.fixture.lookup(&request.tag) {
            Some(FixtureResponse::Text(t)) if t.trim().is_empty() => Err(BackendError::EmptyResponse),
            Some(FixtureResponse::Text(t)) => Ok(ModelResponse { text: t.clone(), retries: 0 }),
            Some(FixtureResponse::Fail(e)) => Err(e.clone()),
            None => Err(BackendError::FixtureMiss {
                sample_id: request.tag.sample_id.clone(),
                kind: request.tag.kind,
                iteration: request.tag.iteration,
            }),
        }
    }

    fn describe(&self) -> String {
        format!("scripted({} entries)", self.fixture.len())
    }
}
