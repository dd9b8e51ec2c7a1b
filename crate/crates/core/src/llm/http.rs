//! OpenAI-compatible `/chat/completions` backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendReply, ChatBackend, ChatRequest, GatewayError, Role, Usage};
use crate::retry::{self, RetryPolicy};

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

pub struct HttpChatBackend {
    cfg: HttpChatConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChatBackend {
    pub fn new(cfg: HttpChatConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        Ok(Self { cfg, client })
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = WireRequest {
            model: &self.cfg.model,
            messages: req
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role,
                    content: &m.content,
                })
                .collect(),
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        };
        let resp: WireResponse = retry::post_json(
            &self.client,
            &url,
            self.cfg.api_key.as_deref(),
            &body,
            &self.cfg.retry,
        )?;
        let content = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Backend("response has no message content".into()))?;
        let usage = resp
            .usage
            .map(|u| Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(BackendReply {
            content,
            usage,
            simulated_latency_ms: None,
        })
    }
}
