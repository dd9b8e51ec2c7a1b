//! Grow-and-refine: semantic de-duplication and budget pruning.
//!
//! Refinement never rewrites bullet text. De-duplication folds clusters of
//! near-identical bullets (within one section) into a single survivor that
//! inherits the cluster's counters; pruning drops the lowest-priority
//! bullets until the rendered playbook fits its token budget.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine, Embedder, EmbeddingError, EmbeddingVector};
use crate::playbook::{Bullet, BulletId, Playbook};
use crate::tokens::TokenCounter;

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Refine after every merged delta.
    Proactive,
    /// Refine only once the rendered playbook exceeds its budget.
    #[default]
    Lazy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinePolicy {
    pub mode: RefineMode,
    pub dedup_threshold: f64,
    pub token_budget: usize,
}

impl Default for RefinePolicy {
    fn default() -> Self {
        Self {
            mode: RefineMode::Lazy,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            token_budget: 8000,
        }
    }
}

impl RefinePolicy {
    pub fn validate(&self) -> Result<(), RefineError> {
        check_threshold(self.dedup_threshold)?;
        if self.token_budget == 0 {
            return Err(RefineError::InvalidPolicy("token_budget must be positive".into()));
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<(), RefineError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(RefineError::InvalidPolicy(format!(
            "dedup threshold {t} is outside (0, 1]"
        )))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("invalid refine policy: {0}")]
    InvalidPolicy(String),
    #[error("embedding bullet {id} failed: {source}")]
    Embedding {
        id: BulletId,
        #[source]
        source: EmbeddingError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedPair {
    pub survivor_id: BulletId,
    pub absorbed_id: BulletId,
    /// Strongest similarity linking the absorbed bullet into its cluster.
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub merged_pairs: Vec<MergedPair>,
    pub pruned_ids: Vec<BulletId>,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

impl RefineReport {
    pub fn is_noop(&self) -> bool {
        self.merged_pairs.is_empty() && self.pruned_ids.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so cluster order is stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Survivor of a duplicate cluster: most helpful, then oldest id.
fn survivor_of<'a>(members: impl Iterator<Item = &'a Bullet>) -> BulletId {
    members
        .max_by(|a, b| a.helpful.cmp(&b.helpful).then(b.id.cmp(&a.id)))
        .expect("non-empty cluster")
        .id
}

/// Merge near-duplicate bullets within each section.
///
/// Every pair at or above `threshold` cosine similarity is linked, and each
/// connected component collapses into one survivor that absorbs the
/// members' helpful and harmful counts. All similarities are computed
/// before anything changes, and on any embedding failure the playbook is
/// left as is.
pub fn dedup(
    pb: &Playbook,
    embedder: &dyn Embedder,
    threshold: f64,
    counter: &dyn TokenCounter,
) -> Result<(Playbook, RefineReport), RefineError> {
    check_threshold(threshold)?;
    let tokens_before = pb.token_count(counter);
    let bullets: Vec<&Bullet> = pb.bullets().collect();

    let vectors: Vec<EmbeddingVector> = bullets
        .par_iter()
        .map(|b| {
            embedder
                .embed(&b.content)
                .map_err(|source| RefineError::Embedding { id: b.id, source })
        })
        .collect::<Result<_, _>>()?;

    let mut by_section: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, b) in bullets.iter().enumerate() {
        by_section.entry(b.section.as_str()).or_default().push(i);
    }

    let mut next = pb.clone();
    let mut merged_pairs = Vec::new();
    for section in pb.sections() {
        let Some(members) = by_section.get(section.as_str()) else {
            continue;
        };
        let n = members.len();
        let edges: Vec<(usize, usize, f64)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let vectors = &vectors;
                (i + 1..n).filter_map(move |j| {
                    let s = cosine(&vectors[members[i]], &vectors[members[j]]).ok()?;
                    (s >= threshold).then_some((i, j, s))
                })
            })
            .collect();
        if edges.is_empty() {
            continue;
        }
        let mut uf = UnionFind::new(n);
        let mut best_link = vec![f64::NEG_INFINITY; n];
        for &(i, j, s) in &edges {
            uf.union(i, j);
            best_link[i] = best_link[i].max(s);
            best_link[j] = best_link[j].max(s);
        }
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = uf.find(i);
            clusters[r].push(i);
        }
        for cluster in clusters.into_iter().filter(|c| c.len() > 1) {
            let survivor = survivor_of(cluster.iter().map(|&i| bullets[members[i]]));
            let mut absorbed = Vec::new();
            for &i in &cluster {
                let b = bullets[members[i]];
                if b.id != survivor {
                    absorbed.push((b, best_link[i]));
                }
            }
            absorbed.sort_by_key(|(b, _)| b.id);
            let s = next.get_mut(survivor).expect("survivor present");
            for (b, sim) in absorbed {
                s.helpful += b.helpful;
                s.harmful += b.harmful;
                s.last_touched_step = s.last_touched_step.max(b.last_touched_step);
                merged_pairs.push(MergedPair {
                    survivor_id: survivor,
                    absorbed_id: b.id,
                    similarity: sim,
                });
            }
        }
    }
    for p in &merged_pairs {
        next.remove(p.absorbed_id);
    }
    merged_pairs.sort_by_key(|p| (p.survivor_id, p.absorbed_id));
    let tokens_after = next.token_count(counter);
    Ok((
        next,
        RefineReport {
            merged_pairs,
            pruned_ids: Vec::new(),
            tokens_before,
            tokens_after,
        },
    ))
}

/// Removal order for pruning: lowest `(helpful - harmful, helpful,
/// last_touched_step, id)` goes first.
pub fn prune_order(pb: &Playbook) -> Vec<BulletId> {
    let mut v: Vec<&Bullet> = pb.bullets().collect();
    v.sort_by_key(|b| (b.net_score(), b.helpful, b.last_touched_step, b.id));
    v.into_iter().map(|b| b.id).collect()
}

/// Drop bullets in [`prune_order`] until the playbook fits its own budget.
pub fn prune_to_budget(pb: &Playbook, counter: &dyn TokenCounter) -> (Playbook, RefineReport) {
    prune_within(pb, counter, pb.token_budget())
}

/// Like [`prune_to_budget`] with an explicit budget. The last remaining
/// bullet is never removed, so the result may still exceed `budget`.
pub fn prune_within(
    pb: &Playbook,
    counter: &dyn TokenCounter,
    budget: usize,
) -> (Playbook, RefineReport) {
    let tokens_before = pb.token_count(counter);
    let mut next = pb.clone();
    let mut pruned_ids = Vec::new();
    let mut tokens = tokens_before;
    if tokens > budget {
        for id in prune_order(pb) {
            if tokens <= budget || next.len() <= 1 {
                break;
            }
            next.remove(id);
            pruned_ids.push(id);
            tokens = next.token_count(counter);
        }
    }
    (
        next,
        RefineReport {
            merged_pairs: Vec::new(),
            pruned_ids,
            tokens_before,
            tokens_after: tokens,
        },
    )
}

/// Apply the refine policy. Proactive mode always dedups and prunes; lazy
/// mode does so only when the playbook is over `policy.token_budget`.
pub fn maybe_refine(
    pb: &Playbook,
    policy: &RefinePolicy,
    embedder: &dyn Embedder,
    counter: &dyn TokenCounter,
) -> Result<(Playbook, Option<RefineReport>), RefineError> {
    policy.validate()?;
    if policy.mode == RefineMode::Lazy && pb.token_count(counter) <= policy.token_budget {
        return Ok((pb.clone(), None));
    }
    let (deduped, d) = dedup(pb, embedder, policy.dedup_threshold, counter)?;
    let (pruned, p) = prune_within(&deduped, counter, policy.token_budget);
    Ok((
        pruned,
        Some(RefineReport {
            merged_pairs: d.merged_pairs,
            pruned_ids: p.pruned_ids,
            tokens_before: d.tokens_before,
            tokens_after: p.tokens_after,
        }),
    ))
}
