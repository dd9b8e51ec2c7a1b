//! Chat-completion gateway.
//!
//! [`Gateway`] wraps any [`ChatBackend`] with usage accounting, latency
//! measurement, a request log and a cap on concurrent calls. Two backends
//! are provided: [`ScriptedBackend`] for deterministic tests and
//! [`HttpChatBackend`] for OpenAI-compatible servers.

mod http;
mod ledger;
mod scripted;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::retry::HttpError;

pub use http::{HttpChatBackend, HttpChatConfig};
pub use ledger::{cost, CostBreakdown, PriceTable, TagTotals, UsageLedger};
pub use scripted::{prompt_key, ExactFixture, FixtureSet, PatternFixture, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Accounting label, e.g. `generator`.
    pub tag: String,
    /// Sample this call works on, kept in the request log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_output_tokens: 2048,
            tag: tag.into(),
            sample_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return bad("no messages"),
            Some(m) if m.role == Role::Assistant => {
                return bad("first message must be system or user")
            }
            _ => {}
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        Ok(())
    }

    /// Message contents joined by newlines; what pattern fixtures match on.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// What a backend hands back to the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    pub usage: Usage,
    /// Backends that do not really wait (fixtures) report the latency to
    /// charge instead of having it measured.
    pub simulated_latency_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("no fixture for {tag} request with prompt key {key}")]
    FixtureMiss { key: String, tag: String },
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("backend error: {0}")]
    Backend(String),
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError>;
}

/// One entry of the gateway's request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub seq: u64,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub usage: Usage,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    clock: Arc<dyn Clock>,
    limiter: Limiter,
    state: Mutex<GatewayState>,
}

#[derive(Default)]
struct GatewayState {
    ledger: UsageLedger,
    log: Vec<RequestRecord>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, clock: Arc<dyn Clock>) -> Self {
        Self::with_max_in_flight(backend, clock, 4)
    }

    pub fn with_max_in_flight(
        backend: Arc<dyn ChatBackend>,
        clock: Arc<dyn Clock>,
        max_in_flight: usize,
    ) -> Self {
        Self {
            backend,
            clock,
            limiter: Limiter {
                max: max_in_flight.max(1),
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
            state: Mutex::new(GatewayState::default()),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Run one chat completion. Every call, failed or not, lands in the
    /// ledger and request log exactly once.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let result = {
            let _slot = self.limiter.acquire();
            let started = Instant::now();
            self.backend.complete(req).map(|reply| {
                let latency = match reply.simulated_latency_ms {
                    Some(ms) => {
                        self.clock.advance(ms);
                        ms
                    }
                    None => started.elapsed().as_millis() as u64,
                };
                (reply, latency)
            })
        };

        let mut st = self.state.lock().expect("gateway state poisoned");
        let seq = st.log.len() as u64;
        match result {
            Ok((reply, latency_ms)) => {
                st.ledger.record(&req.tag, reply.usage, latency_ms, false);
                st.log.push(RequestRecord {
                    seq,
                    tag: req.tag.clone(),
                    sample_id: req.sample_id.clone(),
                    messages: req.messages.clone(),
                    response: Some(reply.content.clone()),
                    usage: reply.usage,
                    latency_ms,
                    error: None,
                });
                Ok(ChatResponse {
                    content: reply.content,
                    usage: reply.usage,
                    latency_ms,
                })
            }
            Err(e) => {
                st.ledger.record(&req.tag, Usage::default(), 0, true);
                st.log.push(RequestRecord {
                    seq,
                    tag: req.tag.clone(),
                    sample_id: req.sample_id.clone(),
                    messages: req.messages.clone(),
                    response: None,
                    usage: Usage::default(),
                    latency_ms: 0,
                    error: Some(e.to_string()),
                });
                Err(e)
            }
        }
    }

    pub fn ledger(&self) -> UsageLedger {
        self.state.lock().expect("gateway state poisoned").ledger.clone()
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.state.lock().expect("gateway state poisoned").log.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().expect("gateway state poisoned").log.len()
    }
}

/// Backend built from a closure, handy for fault injection.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<BackendReply, GatewayError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        (self.0)(req)
    }
}
