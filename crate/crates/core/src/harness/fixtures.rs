//! Scripted role fixtures for the built-in tasks.
//!
//! These stand in for a model that behaves sensibly: the Generator answers
//! correctly only when the playbook already holds what it needs, the
//! Reflector extracts the lesson the feedback supports, and the Curator
//! adds a lesson only when the playbook digest does not already show it.

use crate::llm::{FixtureSet, PatternFixture, Usage};
use crate::roles::{CURATOR_TAG, GENERATOR_TAG, REFLECTOR_TAG};

use super::{ArithEnv, LookupQa, TaskAdapter};

/// Usage and latency a fixture declares for each call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallCost {
    pub usage: Usage,
    pub latency_ms: u64,
}

pub const GENERATOR_COST: CallCost = CallCost {
    usage: Usage { input_tokens: 420, output_tokens: 36 },
    latency_ms: 900,
};
pub const REFLECTOR_COST: CallCost = CallCost {
    usage: Usage { input_tokens: 510, output_tokens: 48 },
    latency_ms: 700,
};
pub const CURATOR_COST: CallCost = CallCost {
    usage: Usage { input_tokens: 380, output_tokens: 40 },
    latency_ms: 600,
};

pub fn declared_cost(tag: &str) -> Option<CallCost> {
    match tag {
        GENERATOR_TAG => Some(GENERATOR_COST),
        REFLECTOR_TAG => Some(REFLECTOR_COST),
        CURATOR_TAG => Some(CURATOR_COST),
        _ => None,
    }
}

/// The lesson the arithmetic fixtures learn from a rejected program.
pub const CALL_SYNTAX_LESSON: &str = "The calculator rejects infix operators such as + and *; write the program as nested calls, for example add(mul(2, 3), 4).";

fn pattern(tag: &str, all_of: &[&str], none_of: &[&str], response: String) -> PatternFixture {
    let cost = declared_cost(tag).expect("role tag");
    PatternFixture {
        tag: Some(tag.to_string()),
        all_of: all_of.iter().map(|s| s.to_string()).collect(),
        none_of: none_of.iter().map(|s| s.to_string()).collect(),
        response,
        usage: cost.usage,
        latency_ms: cost.latency_ms,
    }
}

fn answer(reasoning: &str, final_answer: &str) -> String {
    format!("{reasoning}\nFINAL ANSWER: {final_answer}\nUSED: none\nMISLED: none")
}

fn insight(kind: &str, section: &str, text: &str) -> String {
    serde_json::json!({"insights": [{"kind": kind, "text": text, "section": section}]}).to_string()
}

fn add_op(section: &str, text: &str) -> String {
    serde_json::json!({"ops": [{"op": "ADD", "section": section, "content": text}]}).to_string()
}

/// How a lesson appears in the Curator's new-lesson list.
fn lesson_line(kind: &str, section: &str, text: &str) -> String {
    format!("({kind} -> {section}) {text}")
}

/// How an existing bullet appears in the Curator's digest (truncated there).
fn digest_probe(text: &str) -> String {
    format!("] {}", text.chars().take(60).collect::<String>())
}

fn shared_tail(set: &mut FixtureSet) {
    set.push_pattern(pattern(REFLECTOR_TAG, &[], &[], r#"{"insights": []}"#.into()));
    set.push_pattern(pattern(CURATOR_TAG, &[], &[], r#"{"ops": []}"#.into()));
}

/// Fixtures for [`LookupQa`]: facts are revealed only through ground-truth
/// feedback, so label-free runs learn nothing.
pub fn lookup_qa_fixtures(task: &LookupQa) -> FixtureSet {
    let mut set = FixtureSet::default();
    set.push_pattern(pattern(REFLECTOR_TAG, &["PREVIOUS REFLECTION"], &[], "DONE".into()));
    for (key, value) in task.facts() {
        let question = format!("QUESTION\n{}", LookupQa::question(key));
        let fact = LookupQa::fact_sentence(key, value);
        set.push_pattern(pattern(
            GENERATOR_TAG,
            &[&question, &fact],
            &[],
            answer(&format!("The playbook lists {key}."), value),
        ));
        set.push_pattern(pattern(
            REFLECTOR_TAG,
            &[&question, &format!("Expected answer: {value}")],
            &[],
            insight("domain_fact", "domain_concepts", &fact),
        ));
        set.push_pattern(pattern(
            CURATOR_TAG,
            &[&lesson_line("domain_fact", "domain_concepts", &fact)],
            &[&digest_probe(&fact)],
            add_op("domain_concepts", &fact),
        ));
    }
    set.push_pattern(pattern(
        GENERATOR_TAG,
        &["QUESTION\n"],
        &[],
        answer("No playbook entry covers this key.", "unknown"),
    ));
    shared_tail(&mut set);
    set
}

/// Fixtures for [`ArithEnv`]: the Generator writes infix until the
/// playbook holds [`CALL_SYNTAX_LESSON`], which the Reflector derives from
/// the calculator's error log alone.
pub fn arith_env_fixtures(task: &ArithEnv) -> FixtureSet {
    let mut set = FixtureSet::default();
    set.push_pattern(pattern(REFLECTOR_TAG, &["PREVIOUS REFLECTION"], &[], "DONE".into()));
    for s in task.samples() {
        let Some(expr) = ArithEnv::expression(&s.query) else { continue };
        let Ok(program) = ArithEnv::program_for(expr) else { continue };
        let question = format!("QUESTION\n{}", s.query);
        set.push_pattern(pattern(
            GENERATOR_TAG,
            &[&question, CALL_SYNTAX_LESSON],
            &[],
            answer("The playbook says to use nested calls.", &program),
        ));
        set.push_pattern(pattern(GENERATOR_TAG, &[&question], &[], answer("Direct calculation.", expr)));
    }
    set.push_pattern(pattern(
        REFLECTOR_TAG,
        &["Execution failed.", "infix operator"],
        &[],
        insight("pitfall", "common_failures", CALL_SYNTAX_LESSON),
    ));
    set.push_pattern(pattern(
        CURATOR_TAG,
        &[&lesson_line("pitfall", "common_failures", CALL_SYNTAX_LESSON)],
        &[&digest_probe(CALL_SYNTAX_LESSON)],
        add_op("common_failures", CALL_SYNTAX_LESSON),
    ));
    shared_tail(&mut set);
    set
}
