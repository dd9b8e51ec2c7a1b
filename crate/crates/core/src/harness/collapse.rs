use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::adaptation::StepRecord;

pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.5;

/// Playbook size after one step, and whether a refine pass pruned bullets
/// on that step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPoint {
    pub step: u64,
    pub tokens: usize,
    pub pruned: bool,
}

impl TokenPoint {
    pub fn new(step: u64, tokens: usize) -> Self {
        Self { step, tokens, pruned: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseEvent {
    /// Step at which the smaller count was observed.
    pub step: u64,
    pub tokens_before: usize,
    pub tokens_after: usize,
    pub drop_ratio: f64,
    /// The drop coincides with a pruning pass recorded in the refine report.
    pub whitelisted: bool,
}

/// Flag every adjacent pair whose token count falls by at least `threshold`
/// of the earlier count. Points must be ordered by step.
pub fn detect_collapse(points: &[TokenPoint], threshold: f64) -> Vec<CollapseEvent> {
    points
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0], w[1]);
            if a.tokens == 0 || b.tokens >= a.tokens {
                return None;
            }
            let drop_ratio = 1.0 - b.tokens as f64 / a.tokens as f64;
            (drop_ratio >= threshold).then_some(CollapseEvent {
                step: b.step,
                tokens_before: a.tokens,
                tokens_after: b.tokens,
                drop_ratio,
                whitelisted: b.pruned,
            })
        })
        .collect()
}

/// Token trajectory of a step log. A step counts as pruned when any record
/// of it carries a refine report with pruned bullets.
pub fn points_from_records(records: &[StepRecord]) -> Vec<TokenPoint> {
    let pruned: HashSet<u64> = records
        .iter()
        .filter(|r| r.refine.as_ref().is_some_and(|rr| !rr.pruned_ids.is_empty()))
        .map(|r| r.step)
        .collect();
    records
        .iter()
        .map(|r| TokenPoint {
            step: r.step,
            tokens: r.playbook_tokens,
            pruned: pruned.contains(&r.step),
        })
        .collect()
}

pub fn unexplained(events: &[CollapseEvent]) -> Vec<&CollapseEvent> {
    events.iter().filter(|e| !e.whitelisted).collect()
}
