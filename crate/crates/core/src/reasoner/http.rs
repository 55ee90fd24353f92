use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatMessage, ChatRequest, ContentPart, Reasoner, Role};
use crate::backend::{BackendError, RetryPolicy};

pub const API_KEY_ENV: &str = "TRACKPRUNE_REASONER_KEY";

/// Client for a chat-completions service (`POST <base>/chat/completions`).
#[derive(Debug, Clone)]
pub struct HttpReasoner {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpReasoner {
    /// Reads the bearer token from `TRACKPRUNE_REASONER_KEY` when set.
    pub fn new(base_url: &str, model: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build();
        Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            agent: ureq::Agent::new_with_config(config),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// The JSON body sent for `request`.
    pub fn payload(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "messages": request.messages.iter().map(message_json).collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn post(&self, body: &Value) -> Result<String, BackendError> {
        let transport = |e: ureq::Error| BackendError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let protocol = |message: String| BackendError::Protocol {
            endpoint: self.endpoint.clone(),
            message,
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(64 << 20)
            .read_to_string()
            .map_err(transport)?;
        if status != 200 {
            return Err(BackendError::Status {
                endpoint: self.endpoint.clone(),
                status,
                body: text,
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| protocol(e.to_string()))?;
        let choice = value
            .pointer("/choices/0")
            .ok_or_else(|| protocol("response has no choices".into()))?;
        let content = match choice.pointer("/message/content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
            _ => return Err(protocol("choices[0].message.content missing".into())),
        };
        if choice.get("finish_reason").and_then(Value::as_str) == Some("length") {
            return Err(BackendError::Truncated { partial: content });
        }
        Ok(content)
    }
}

fn message_json(message: &ChatMessage) -> Value {
    let role = match message.role {
        Role::System => "system",
        Role::User => "user",
    };
    let content: Vec<Value> = message
        .parts
        .iter()
        .map(|part| match part {
            ContentPart::Text(t) => json!({"type": "text", "text": t}),
            ContentPart::Image(img) => {
                json!({"type": "image_url", "image_url": {"url": img.to_data_url()}})
            }
        })
        .collect();
    json!({ "role": role, "content": content })
}

impl Reasoner for HttpReasoner {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = self.payload(request);
        self.retry.run(|| self.post(&body))
    }
}
