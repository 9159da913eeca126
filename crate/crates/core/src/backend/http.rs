//! Client for OpenAI-compatible `/chat/completions` endpoints with image
//! content parts.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{BackendError, ModelBackend, ModelRequest, ModelResponse, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Prefix ending before `/chat/completions`, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    #[serde(with = "secs")]
    pub backoff_base: Duration,
    #[serde(with = "secs")]
    pub backoff_cap: Duration,
    pub max_in_flight: usize,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(30),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpBackendConfig,
    endpoint: String,
    permits: Arc<Semaphore>,
}

enum Attempt {
    Done(String),
    Retry { message: String, status: Option<u16>, body: String, after: Option<Duration> },
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Ok(Self { client, config, endpoint, permits })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn payload(&self, request: &ModelRequest) -> Value {
        let last_user = request.messages.iter().rposition(|m| m.role == Role::User);
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| match m.role {
                Role::System => json!({"role": "system", "content": m.text}),
                Role::User if Some(i) == last_user => json!({
                    "role": "user",
                    "content": [
                        {"type": "image_url", "image_url": {"url": request.image.wire_url()}},
                        {"type": "text", "text": m.text},
                    ],
                }),
                Role::User => json!({"role": "user", "content": m.text}),
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.config.backoff_base.saturating_mul(1u32 << attempt.min(16));
        let capped = exp.min(self.config.backoff_cap);
        capped.mul_f64(rand::rng().random_range(0.5..=1.0))
    }

    async fn attempt(&self, body: &Value) -> Result<Attempt, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry { message: e.to_string(), status: None, body: String::new(), after: None })
            }
            Err(e) => return Err(BackendError::Transport { attempts: 1, message: e.to_string() }),
        };
        let status = resp.status();
        let after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .and_then(|s| Duration::try_from_secs_f64(s).ok());
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => {
                return Ok(Attempt::Retry { message: e.to_string(), status: None, body: String::new(), after: None })
            }
        };
        if status.is_success() {
            return Ok(Attempt::Done(text));
        }
        if is_transient(status) {
            return Ok(Attempt::Retry { message: status.to_string(), status: Some(status.as_u16()), body: text, after });
        }
        Err(BackendError::Http { status: status.as_u16(), attempts: 1, body: text })
    }
}

fn is_transient(status: StatusCode) -> bool {
    status == StatusCode::REQUEST_TIMEOUT || status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// Pulls the assistant text out of a chat-completions response body.
pub(crate) fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(BackendError::Malformed(format!("unexpected content type: {other}"))),
    };
    if text.trim().is_empty() {
        return Err(BackendError::EmptyResponse);
    }
    Ok(text)
}

#[async_trait]
impl ModelBackend for HttpBackend {
    async fn generate(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let body = self.payload(request);
        let mut retries = 0;
        loop {
            let attempts = retries + 1;
            match self.attempt(&body).await {
                Ok(Attempt::Done(text)) => {
                    return extract_content(&text).map(|text| ModelResponse { text, retries });
                }
                Ok(Attempt::Retry { message, status, body, after }) => {
                    if retries >= self.config.max_retries {
                        return Err(match status {
                            Some(status) => BackendError::Http { status, attempts, body },
                            None => BackendError::Transport { attempts, message },
                        });
                    }
                    let wait = after.map_or_else(|| self.backoff(retries), |d| d.min(self.config.backoff_cap));
                    tracing::warn!(
                        sample = %request.tag.sample_id,
                        kind = %request.tag.kind,
                        attempt = attempts,
                        "transient backend failure ({message}); retrying in {wait:?}"
                    );
                    tokio::time::sleep(wait).await;
                    retries += 1;
                }
                Err(BackendError::Http { status, body, .. }) => {
                    return Err(BackendError::Http { status, attempts, body })
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport { attempts, message })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn describe(&self) -> String {
        format!("http({} @ {})", self.config.model, self.config.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_string_and_parts() {
        let s = r#"{"choices":[{"message":{"role":"assistant","content":"ANSWER: 7"}}]}"#;
        assert_eq!(extract_content(s).unwrap(), "ANSWER: 7");
        let p = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(extract_content(p).unwrap(), "ab");
    }

    #[test]
    fn malformed_and_empty_bodies() {
        assert!(matches!(extract_content("<html>"), Err(BackendError::Malformed(_))));
        assert!(matches!(extract_content(r#"{"choices":[]}"#), Err(BackendError::Malformed(_))));
        let empty = r#"{"choices":[{"message":{"content":"  "}}]}"#;
        assert_eq!(extract_content(empty), Err(BackendError::EmptyResponse));
    }

    #[test]
    fn backoff_is_capped_and_jittered() {
        let b = HttpBackend::new(HttpBackendConfig {
            backoff_base: Duration::from_millis(100),
            backoff_cap: Duration::from_millis(250),
            ..Default::default()
        })
        .unwrap();
        for attempt in 0..10 {
            let d = b.backoff(attempt);
            assert!(d <= Duration::from_millis(250));
            assert!(d >= Duration::from_millis(50));
        }
    }
}
