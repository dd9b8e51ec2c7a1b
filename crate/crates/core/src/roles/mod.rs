//! The three agentic roles.
//!
//! * The Generator answers a query with the rendered playbook in its prompt
//!   and cites the bullets that helped or misled it.
//! * The Reflector turns a trajectory plus whatever feedback is available
//!   into a [`Reflection`], optionally refining it over several rounds.
//! * The Curator turns a reflection into a [`DeltaContext`]. It only ever
//!   sees the reflection and a digest of the playbook, never the raw
//!   trajectory.
//!
//! Role outputs are parsed leniently. Malformed citations are dropped, and
//! a reflection or op list that cannot be parsed gets one reprompt before
//! the role degrades to an empty result.

pub mod parse;
mod prompts;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::delta::{DeltaContext, DeltaOp, MarkTag, Provenance};
use crate::llm::{ChatRequest, Gateway, GatewayError, Message, Role};
use crate::playbook::{BulletId, Playbook};

pub use prompts::{fill, Prompts};

pub const DEFAULT_MAX_REFLECTION_ROUNDS: u32 = 5;

/// Characters of each bullet shown to the Curator.
pub const DIGEST_CHARS: usize = 80;

pub const GENERATOR_TAG: &str = "generator";
pub const REFLECTOR_TAG: &str = "reflector";
pub const CURATOR_TAG: &str = "curator";

#[derive(Debug, thiserror::Error)]
pub enum RoleError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reflection round {round} is outside 1..={max}")]
    InvalidRound { round: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSettings {
    pub task_preamble: String,
    pub generator_temperature: f64,
    pub reflector_temperature: f64,
    pub curator_temperature: f64,
    pub max_output_tokens: u32,
    pub max_reflection_rounds: u32,
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self {
            task_preamble: String::new(),
            generator_temperature: 0.0,
            reflector_temperature: 0.0,
            curator_temperature: 0.0,
            max_output_tokens: 2048,
            max_reflection_rounds: DEFAULT_MAX_REFLECTION_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    /// Reasoning lines preceding the final answer.
    pub steps: Vec<String>,
    pub final_answer: String,
    pub cited_helpful: Vec<BulletId>,
    pub cited_misleading: Vec<BulletId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedback {
    GroundTruth { expected: String },
    Execution { success: bool, log: String },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightKind {
    Strategy,
    Pitfall,
    DomainFact,
    Correction,
}

impl InsightKind {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "strategy" => Some(Self::Strategy),
            "pitfall" | "failure" | "common_failure" => Some(Self::Pitfall),
            "domain_fact" | "fact" | "domain_concept" => Some(Self::DomainFact),
            "correction" => Some(Self::Correction),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Strategy => "strategy",
            Self::Pitfall => "pitfall",
            Self::DomainFact => "domain_fact",
            Self::Correction => "correction",
        }
    }

    /// Section used when the Reflector does not name one.
    pub fn default_section(self) -> &'static str {
        match self {
            Self::Strategy => "strategies",
            Self::Pitfall => "common_failures",
            Self::DomainFact => "domain_concepts",
            Self::Correction => "general",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub kind: InsightKind,
    pub text: String,
    pub target_section: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedMark {
    pub bullet_id: BulletId,
    pub tag: MarkTag,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub insights: Vec<Insight>,
    pub proposed_marks: Vec<ProposedMark>,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectOutcome {
    pub reflection: Reflection,
    /// The Reflector said DONE, repeated itself, or could not be parsed.
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurateOutcome {
    pub delta: DeltaContext,
    pub warnings: Vec<String>,
}

/// `id [section] first 80 chars` per bullet, or `(none)`.
pub fn playbook_digest(pb: &Playbook) -> String {
    if pb.is_empty() {
        return "(none)".into();
    }
    pb.bullets()
        .map(|b| {
            let head: String = b.content.chars().take(DIGEST_CHARS).collect();
            format!("{} [{}] {}", b.id, b.section, head.replace('\n', " "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse a Generator reply into a trajectory.
pub fn parse_trajectory(query: &str, reply: &str) -> Trajectory {
    let lines: Vec<&str> = reply.lines().collect();
    let final_idx = lines
        .iter()
        .rposition(|l| parse::labelled(l, "final answer").is_some());
    let final_answer = final_idx
        .and_then(|i| parse::labelled(lines[i], "final answer"))
        .unwrap_or("")
        .to_string();
    let mut cited_helpful = Vec::new();
    let mut cited_misleading = Vec::new();
    let mut steps = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(v) = parse::labelled(line, "used") {
            cited_helpful.extend(parse::citation_ids(v));
        } else if let Some(v) = parse::labelled(line, "misled") {
            cited_misleading.extend(parse::citation_ids(v));
        } else if final_idx.is_none_or(|f| i < f) && !line.trim().is_empty() {
            steps.push(line.trim().to_string());
        }
    }
    unique_in_order(&mut cited_helpful);
    unique_in_order(&mut cited_misleading);
    Trajectory {
        query: query.to_string(),
        steps,
        final_answer,
        cited_helpful,
        cited_misleading,
    }
}

fn unique_in_order(ids: &mut Vec<BulletId>) {
    let mut seen = std::collections::HashSet::new();
    ids.retain(|id| seen.insert(*id));
}

fn feedback_text(fb: &Feedback) -> String {
    match fb {
        Feedback::GroundTruth { expected } => format!("Expected answer: {expected}"),
        Feedback::Execution { success: true, log } if log.trim().is_empty() => {
            "Execution succeeded.".into()
        }
        Feedback::Execution { success: true, log } => format!("Execution succeeded.\nLog:\n{log}"),
        Feedback::Execution { success: false, log } => format!("Execution failed.\nLog:\n{log}"),
        Feedback::None => "No feedback is available for this attempt.".into(),
    }
}

fn id_list(ids: &[BulletId]) -> String {
    if ids.is_empty() {
        "none".into()
    } else {
        ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
    }
}

fn parse_reflection(text: &str) -> Option<(Vec<Insight>, Vec<ProposedMark>)> {
    let obj = parse::first_json_object(text)?;
    let raw_insights = match obj.get("insights") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return None,
        None => &[],
    };
    if raw_insights.is_empty() && !obj.contains_key("marks") && !obj.contains_key("insights") {
        return None;
    }
    let mut insights = Vec::new();
    for v in raw_insights {
        let Some(text) = v.get("text").and_then(Value::as_str).map(str::trim) else {
            continue;
        };
        if text.is_empty() {
            continue;
        }
        let Some(kind) = v.get("kind").and_then(Value::as_str).and_then(InsightKind::parse) else {
            continue;
        };
        let section = v
            .get("section")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .unwrap_or(kind.default_section());
        insights.push(Insight {
            kind,
            text: text.to_string(),
            target_section: section.to_string(),
        });
    }
    let mut marks = Vec::new();
    if let Some(Value::Array(a)) = obj.get("marks") {
        for v in a {
            let id = v.get("id").and_then(Value::as_str).and_then(|s| s.parse().ok());
            let tag = v.get("tag").and_then(|t| serde_json::from_value(t.clone()).ok());
            if let (Some(bullet_id), Some(tag)) = (id, tag) {
                marks.push(ProposedMark { bullet_id, tag });
            }
        }
    }
    Some((insights, marks))
}

/// Trajectory citations first, then Reflector marks not already present.
fn combine_marks(traj: &Trajectory, extra: Vec<ProposedMark>) -> Vec<ProposedMark> {
    let mut out: Vec<ProposedMark> = traj
        .cited_helpful
        .iter()
        .map(|&bullet_id| ProposedMark { bullet_id, tag: MarkTag::Helpful })
        .chain(traj.cited_misleading.iter().map(|&bullet_id| ProposedMark {
            bullet_id,
            tag: MarkTag::Harmful,
        }))
        .collect();
    for m in extra {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn render_insights(r: &Reflection) -> String {
    if r.insights.is_empty() {
        return "(none)".into();
    }
    r.insights
        .iter()
        .map(|i| format!("- ({} -> {}) {}", i.kind.as_str(), i.target_section, i.text))
        .collect::<Vec<_>>()
        .join("\n")
}

enum OpsParse {
    Ops(Vec<DeltaOp>, Vec<String>),
    Unparseable,
}

fn parse_ops(text: &str) -> OpsParse {
    let Some(obj) = parse::first_json_object(text) else {
        return OpsParse::Unparseable;
    };
    let Some(Value::Array(raw)) = obj.get("ops") else {
        return OpsParse::Unparseable;
    };
    let mut ops = Vec::new();
    let mut warnings = Vec::new();
    for (i, v) in raw.iter().enumerate() {
        match serde_json::from_value::<DeltaOp>(v.clone()) {
            Ok(DeltaOp::Add { content, .. }) if content.trim().is_empty() => {
                warnings.push(format!("op {i}: ADD with empty content dropped"));
            }
            Ok(DeltaOp::Add { section, content }) => ops.push(DeltaOp::Add {
                section: section.trim().to_string(),
                content: content.trim().to_string(),
            }),
            Ok(op) => ops.push(op),
            Err(e) => warnings.push(format!("op {i} rejected ({e}): {v}")),
        }
    }
    OpsParse::Ops(ops, warnings)
}

/// Role calls bound to one gateway, template set and settings.
pub struct Roles<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a Prompts,
    pub settings: &'a RoleSettings,
}

impl Roles<'_> {
    fn request(&self, tag: &str, temperature: f64, sample_id: &str, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            messages,
            temperature,
            max_output_tokens: self.settings.max_output_tokens,
            tag: tag.to_string(),
            sample_id: Some(sample_id.to_string()),
        }
    }

    pub fn generator_prompt(&self, pb: &Playbook, query: &str) -> String {
        fill(
            &self.prompts.generator,
            &[
                ("preamble", self.settings.task_preamble.as_str()),
                ("playbook", &pb.render()),
                ("query", query),
            ],
        )
        .trim()
        .to_string()
    }

    pub fn generate(&self, pb: &Playbook, query: &str, sample_id: &str) -> Result<Trajectory, RoleError> {
        let req = self.request(
            GENERATOR_TAG,
            self.settings.generator_temperature,
            sample_id,
            vec![Message::new(Role::User, self.generator_prompt(pb, query))],
        );
        let resp = self.gateway.complete(&req)?;
        Ok(parse_trajectory(query, &resp.content))
    }

    /// One Reflector round. `prior` is shown to the model when `round > 1`.
    pub fn reflect(
        &self,
        traj: &Trajectory,
        fb: &Feedback,
        prior: Option<&Reflection>,
        round: u32,
        sections: &[String],
        sample_id: &str,
    ) -> Result<ReflectOutcome, RoleError> {
        let max = self.settings.max_reflection_rounds;
        if round == 0 || round > max {
            return Err(RoleError::InvalidRound { round, max });
        }
        let prior = prior.filter(|_| round > 1);
        let prior_text = match prior {
            Some(p) => fill(
                &self.prompts.reflector_prior,
                &[
                    ("round", &p.round.to_string()),
                    (
                        "reflection",
                        &serde_json::to_string(&ReflectorWire::from(p)).expect("serializes"),
                    ),
                ],
            ),
            None => String::new(),
        };
        let prompt = fill(
            &self.prompts.reflector,
            &[
                ("query", traj.query.as_str()),
                ("reasoning", &if traj.steps.is_empty() { "(no reasoning recorded)".to_string() } else { traj.steps.join("\n") }),
                ("final_answer", traj.final_answer.as_str()),
                ("used", &id_list(&traj.cited_helpful)),
                ("misled", &id_list(&traj.cited_misleading)),
                ("feedback", &feedback_text(fb)),
                ("prior", &prior_text),
                ("sections", &sections.join(", ")),
            ],
        );
        let mut messages = vec![Message::new(Role::User, prompt)];
        let mut req = self.request(REFLECTOR_TAG, self.settings.reflector_temperature, sample_id, messages.clone());
        let mut reply = self.gateway.complete(&req)?.content;
        let mut attempts = 0;
        let parsed = loop {
            if parse::is_done(&reply) {
                let reflection = Reflection {
                    insights: prior.map(|p| p.insights.clone()).unwrap_or_default(),
                    proposed_marks: combine_marks(traj, prior.map(|p| p.proposed_marks.clone()).unwrap_or_default()),
                    round,
                };
                return Ok(ReflectOutcome { reflection, stop: true });
            }
            if let Some(p) = parse_reflection(&reply) {
                break Some(p);
            }
            attempts += 1;
            if attempts > 1 {
                break None;
            }
            tracing::debug!(sample_id, round, "reflector reply unparseable, reprompting");
            messages.push(Message::new(Role::Assistant, reply.clone()));
            messages.push(Message::new(
                Role::User,
                fill(&self.prompts.format_reminder, &[("done_hint", ", or DONE")]),
            ));
            req = self.request(REFLECTOR_TAG, self.settings.reflector_temperature, sample_id, messages.clone());
            reply = self.gateway.complete(&req)?.content;
        };
        let Some((insights, marks)) = parsed else {
            tracing::warn!(sample_id, round, "reflector reply unparseable twice; using empty reflection");
            return Ok(ReflectOutcome {
                reflection: Reflection {
                    insights: Vec::new(),
                    proposed_marks: combine_marks(traj, Vec::new()),
                    round,
                },
                stop: true,
            });
        };
        let stop = prior.is_some_and(|p| p.insights == insights);
        Ok(ReflectOutcome {
            reflection: Reflection {
                insights,
                proposed_marks: combine_marks(traj, marks),
                round,
            },
            stop,
        })
    }

    /// Reflector rounds until DONE, a repeated insight set, or the round cap.
    pub fn reflect_loop(
        &self,
        traj: &Trajectory,
        fb: &Feedback,
        sections: &[String],
        sample_id: &str,
    ) -> Result<Reflection, RoleError> {
        let mut current: Option<Reflection> = None;
        for round in 1..=self.settings.max_reflection_rounds.max(1) {
            let out = self.reflect(traj, fb, current.as_ref(), round, sections, sample_id)?;
            current = Some(out.reflection);
            if out.stop {
                break;
            }
        }
        Ok(current.unwrap_or_default())
    }

    pub fn curator_prompt(&self, refl: &Reflection, digest: &str, sections: &[String]) -> String {
        fill(
            &self.prompts.curator,
            &[
                ("insights", &render_insights(refl)),
                ("digest", digest),
                ("sections", &sections.join(", ")),
            ],
        )
    }

    /// Turn a reflection into a delta. The Reflection's proposed marks are
    /// always appended, so counter feedback survives a careless Curator.
    pub fn curate(
        &self,
        refl: &Reflection,
        digest: &str,
        sections: &[String],
        provenance: Provenance,
    ) -> Result<CurateOutcome, RoleError> {
        let mut delta = DeltaContext {
            ops: Vec::new(),
            provenance,
        };
        let mut warnings = Vec::new();
        if !refl.insights.is_empty() {
            let sample_id = delta.provenance.sample_id.clone();
            let mut messages = vec![Message::new(Role::User, self.curator_prompt(refl, digest, sections))];
            let mut reply = self
                .gateway
                .complete(&self.request(CURATOR_TAG, self.settings.curator_temperature, &sample_id, messages.clone()))?
                .content;
            let mut parsed = parse_ops(&reply);
            if matches!(parsed, OpsParse::Unparseable) {
                tracing::debug!(%sample_id, "curator reply unparseable, reprompting");
                messages.push(Message::new(Role::Assistant, reply));
                messages.push(Message::new(Role::User, fill(&self.prompts.format_reminder, &[("done_hint", "")])));
                reply = self
                    .gateway
                    .complete(&self.request(CURATOR_TAG, self.settings.curator_temperature, &sample_id, messages))?
                    .content;
                parsed = parse_ops(&reply);
            }
            match parsed {
                OpsParse::Ops(ops, w) => {
                    delta.ops = ops;
                    warnings.extend(w);
                }
                OpsParse::Unparseable => {
                    warnings.push("curator output unparseable after reprompt; keeping reflection marks only".into());
                }
            }
        }
        for m in &refl.proposed_marks {
            let op = DeltaOp::mark(m.bullet_id, m.tag);
            if !delta.ops.contains(&op) {
                delta.ops.push(op);
            }
        }
        for w in &warnings {
            tracing::warn!(sample_id = %delta.provenance.sample_id, "{w}");
        }
        Ok(CurateOutcome { delta, warnings })
    }
}

/// Reflection as the Reflector itself writes it.
#[derive(Serialize)]
struct ReflectorWire {
    insights: Vec<WireInsight>,
    marks: Vec<WireMark>,
}

#[derive(Serialize)]
struct WireInsight {
    kind: &'static str,
    text: String,
    section: String,
}

#[derive(Serialize)]
struct WireMark {
    id: String,
    tag: MarkTag,
}

impl From<&Reflection> for ReflectorWire {
    fn from(r: &Reflection) -> Self {
        Self {
            insights: r
                .insights
                .iter()
                .map(|i| WireInsight {
                    kind: i.kind.as_str(),
                    text: i.text.clone(),
                    section: i.target_section.clone(),
                })
                .collect(),
            marks: r
                .proposed_marks
                .iter()
                .map(|m| WireMark {
                    id: m.bullet_id.to_string(),
                    tag: m.tag,
                })
                .collect(),
        }
    }
}
