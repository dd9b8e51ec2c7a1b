//! Deterministic fixture-driven chat backend.
//!
//! Requests are first looked up by their exact prompt key (see
//! [`prompt_key`]); if that misses, the pattern table is scanned in file
//! order and the first entry whose substrings all match wins. A request
//! that matches nothing is an error, never a default reply.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendReply, ChatBackend, ChatRequest, GatewayError, Message, Usage};

/// SHA-256 over the `role:content` lines of a message list, hex encoded.
pub fn prompt_key(messages: &[Message]) -> String {
    let mut h = Sha256::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(m.role.as_str().as_bytes());
        h.update(b":");
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactFixture {
    pub key: String,
    pub response: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatternFixture {
    /// Restrict to requests with this accounting tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default)]
    pub all_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub none_of: Vec<String>,
    pub response: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl PatternFixture {
    fn matches(&self, req: &ChatRequest, prompt: &str) -> bool {
        self.tag.as_deref().is_none_or(|t| t == req.tag)
            && self.all_of.iter().all(|p| prompt.contains(p.as_str()))
            && !self.none_of.iter().any(|p| prompt.contains(p.as_str()))
    }
}

/// On-disk fixture document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixtureSet {
    #[serde(default)]
    pub exact: Vec<ExactFixture>,
    #[serde(default)]
    pub patterns: Vec<PatternFixture>,
}

impl FixtureSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Backend(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Backend(format!("parsing {}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("fixtures serialize");
        s.push('\n');
        std::fs::write(path, s)
    }

    pub fn push_pattern(&mut self, p: PatternFixture) -> &mut Self {
        self.patterns.push(p);
        self
    }

    pub fn extend(&mut self, other: FixtureSet) -> &mut Self {
        self.exact.extend(other.exact);
        self.patterns.extend(other.patterns);
        self
    }
}

pub struct ScriptedBackend {
    exact: HashMap<String, ExactFixture>,
    patterns: Vec<PatternFixture>,
}

impl ScriptedBackend {
    pub fn new(set: FixtureSet) -> Self {
        let mut exact = HashMap::new();
        for f in set.exact {
            // First entry for a key wins, same as pattern order.
            exact.entry(f.key.clone()).or_insert(f);
        }
        Self {
            exact,
            patterns: set.patterns,
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let key = prompt_key(&req.messages);
        if let Some(f) = self.exact.get(&key) {
            return Ok(BackendReply {
                content: f.response.clone(),
                usage: f.usage,
                simulated_latency_ms: Some(f.latency_ms),
            });
        }
        let prompt = req.prompt_text();
        match self.patterns.iter().find(|p| p.matches(req, &prompt)) {
            Some(f) => Ok(BackendReply {
                content: f.response.clone(),
                usage: f.usage,
                simulated_latency_ms: Some(f.latency_ms),
            }),
            None => Err(GatewayError::FixtureMiss {
                key,
                tag: req.tag.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;

    fn req(tag: &str, text: &str) -> ChatRequest {
        ChatRequest::new(tag, vec![Message::new(Role::User, text)])
    }

    #[test]
    fn exact_key_echo() {
        let r = req("generator", "hi");
        let set = FixtureSet {
            exact: vec![ExactFixture {
                key: prompt_key(&r.messages),
                response: "hello".into(),
                usage: Usage { input_tokens: 3, output_tokens: 1 },
                latency_ms: 5,
            }],
            patterns: vec![],
        };
        let reply = ScriptedBackend::new(set).complete(&r).unwrap();
        assert_eq!(reply.content, "hello");
        assert_eq!(reply.usage.input_tokens, 3);
        assert_eq!(reply.simulated_latency_ms, Some(5));
    }

    #[test]
    fn miss_names_the_key() {
        let r = req("generator", "unmatched");
        let err = ScriptedBackend::new(FixtureSet::default()).complete(&r).unwrap_err();
        match err {
            GatewayError::FixtureMiss { key, tag } => {
                assert_eq!(key, prompt_key(&r.messages));
                assert_eq!(tag, "generator");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn first_matching_pattern_wins() {
        let mut set = FixtureSet::default();
        set.push_pattern(PatternFixture {
            all_of: vec!["alpha".into(), "beta".into()],
            response: "both".into(),
            ..Default::default()
        })
        .push_pattern(PatternFixture {
            all_of: vec!["alpha".into()],
            none_of: vec!["gamma".into()],
            response: "alpha only".into(),
            ..Default::default()
        })
        .push_pattern(PatternFixture {
            tag: Some("curator".into()),
            all_of: vec![],
            response: "curator default".into(),
            ..Default::default()
        });
        let b = ScriptedBackend::new(set);
        assert_eq!(b.complete(&req("g", "alpha beta")).unwrap().content, "both");
        assert_eq!(b.complete(&req("g", "alpha")).unwrap().content, "alpha only");
        assert!(b.complete(&req("g", "alpha gamma")).is_err());
        assert_eq!(b.complete(&req("curator", "x")).unwrap().content, "curator default");
    }

    #[test]
    fn key_covers_roles() {
        let a = vec![Message::new(Role::System, "x")];
        let b = vec![Message::new(Role::User, "x")];
        assert_ne!(prompt_key(&a), prompt_key(&b));
        assert_eq!(prompt_key(&a).len(), 64);
    }
}
