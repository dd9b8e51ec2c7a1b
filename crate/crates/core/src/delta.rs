//! Incremental context updates.
//!
//! A [`DeltaContext`] is a small list of [`DeltaOp`]s produced for one
//! sample. Merging is plain, deterministic code: `ADD` appends a bullet
//! under a freshly allocated id and `MARK` bumps one counter of an existing
//! bullet. Nothing is ever removed or rewritten here, so the merged
//! playbook always contains every bullet of its predecessor verbatim.
//!
//! [`merge_batch`] sorts deltas into canonical order (sample id, then
//! epoch, then submission position) and produces exactly what folding
//! [`merge`] over that order would. Id allocation is sequential; mark
//! resolution for the whole batch runs in parallel afterwards.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::playbook::{Bullet, BulletId, Playbook, CATCH_ALL_SECTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkTag {
    Helpful,
    Harmful,
}

impl std::fmt::Display for MarkTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarkTag::Helpful => "helpful",
            MarkTag::Harmful => "harmful",
        })
    }
}

/// One merge operation. Serializes to the delta wire format:
/// `{"op":"ADD","section":..,"content":..}` or `{"op":"MARK","id":..,"tag":..}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum DeltaOp {
    #[serde(rename = "ADD")]
    Add { section: String, content: String },
    #[serde(rename = "MARK")]
    Mark {
        #[serde(rename = "id")]
        bullet_id: BulletId,
        tag: MarkTag,
    },
}

impl DeltaOp {
    pub fn add(section: impl Into<String>, content: impl Into<String>) -> Self {
        DeltaOp::Add {
            section: section.into(),
            content: content.into(),
        }
    }

    pub fn mark(bullet_id: BulletId, tag: MarkTag) -> Self {
        DeltaOp::Mark { bullet_id, tag }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub epoch: u32,
    pub role_round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaContext {
    pub ops: Vec<DeltaOp>,
    pub provenance: Provenance,
}

impl DeltaContext {
    pub fn new(sample_id: impl Into<String>, epoch: u32, role_round: u32) -> Self {
        Self {
            ops: Vec::new(),
            provenance: Provenance {
                sample_id: sample_id.into(),
                epoch,
                role_round,
            },
        }
    }

    pub fn with_ops(mut self, ops: impl IntoIterator<Item = DeltaOp>) -> Self {
        self.ops.extend(ops);
        self
    }

    pub fn add_count(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, DeltaOp::Add { .. })).count()
    }

    pub fn mark_count(&self) -> usize {
        self.ops.len() - self.add_count()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.provenance.sample_id.trim().is_empty() {
            return Err("provenance sample_id is empty".into());
        }
        for (i, op) in self.ops.iter().enumerate() {
            if let DeltaOp::Add { section, content } = op {
                if content.trim().is_empty() {
                    return Err(format!("op {i}: ADD with empty content"));
                }
                if section.trim().is_empty() {
                    return Err(format!("op {i}: ADD with empty section"));
                }
            }
        }
        Ok(())
    }
}

/// The delta wire document: `{"ops": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireDelta {
    pub ops: Vec<DeltaOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    UnknownId,
    /// The target id was minted by an ADD in the same delta.
    SameBatchId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedMark {
    pub bullet_id: BulletId,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redirect {
    pub bullet_id: BulletId,
    pub requested_section: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub added_ids: Vec<BulletId>,
    pub applied_marks: usize,
    pub skipped_marks: Vec<SkippedMark>,
    /// ADDs whose section was unknown and went to the catch-all section.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub redirected: Vec<Redirect>,
}

#[derive(Debug, thiserror::Error)]
pub enum DeltaError {
    #[error("delta {index} rejected: {message}")]
    Validation { index: usize, message: String },
}

/// Merge one delta. Advances the playbook step by one.
pub fn merge(pb: &Playbook, delta: &DeltaContext) -> Result<(Playbook, MergeReport), DeltaError> {
    let (next, mut reports) = merge_batch(pb, std::slice::from_ref(delta))?;
    Ok((next, reports.pop().expect("one report per delta")))
}

/// Order used by [`merge_batch`]: sample id, then epoch, then position.
pub fn canonical_order(deltas: &[DeltaContext]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..deltas.len()).collect();
    idx.sort_by(|&a, &b| compare_provenance(&deltas[a], &deltas[b]).then(a.cmp(&b)));
    idx
}

fn compare_provenance(a: &DeltaContext, b: &DeltaContext) -> Ordering {
    a.provenance
        .sample_id
        .cmp(&b.provenance.sample_id)
        .then(a.provenance.epoch.cmp(&b.provenance.epoch))
}

struct ResolvedMarks {
    applied: Vec<(BulletId, MarkTag)>,
    skipped: Vec<SkippedMark>,
}

/// Merge many deltas. The result equals folding [`merge`] over
/// [`canonical_order`]; reports come back in submission order. If any
/// delta is structurally invalid nothing is merged.
pub fn merge_batch(
    pb: &Playbook,
    deltas: &[DeltaContext],
) -> Result<(Playbook, Vec<MergeReport>), DeltaError> {
    for (index, d) in deltas.iter().enumerate() {
        d.validate()
            .map_err(|message| DeltaError::Validation { index, message })?;
    }
    let order = canonical_order(deltas);
    let base_step = pb.step();
    let mut next = pb.clone();
    let mut reports = vec![MergeReport::default(); deltas.len()];

    // Sequential: fresh ids in canonical order.
    let mut minted: Vec<Range<u64>> = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        let step = base_step + 1 + k as u64;
        let start = next.next_id();
        for op in &deltas[i].ops {
            let DeltaOp::Add { section, content } = op else {
                continue;
            };
            let id = next.allocate_id();
            let target = if next.has_section(section) {
                section.clone()
            } else {
                reports[i].redirected.push(Redirect {
                    bullet_id: id,
                    requested_section: section.clone(),
                });
                CATCH_ALL_SECTION.to_string()
            };
            next.insert(Bullet {
                id,
                section: target,
                content: content.clone(),
                helpful: 0,
                harmful: 0,
                created_step: step,
                last_touched_step: step,
            });
            reports[i].added_ids.push(id);
        }
        minted.push(start..next.next_id());
    }

    // Parallel: each mark is judged against what existed when its delta
    // would have merged in the sequential fold.
    let floor = pb.next_id();
    let resolved: Vec<ResolvedMarks> = order
        .par_iter()
        .zip(minted.par_iter())
        .map(|(&i, own)| {
            let mut r = ResolvedMarks {
                applied: Vec::new(),
                skipped: Vec::new(),
            };
            for op in &deltas[i].ops {
                let DeltaOp::Mark { bullet_id, tag } = op else {
                    continue;
                };
                let n = bullet_id.get();
                let reason = if own.contains(&n) {
                    Some(SkipReason::SameBatchId)
                } else if n >= own.end || (n < floor && pb.get(*bullet_id).is_none()) {
                    Some(SkipReason::UnknownId)
                } else {
                    None
                };
                match reason {
                    Some(reason) => r.skipped.push(SkippedMark {
                        bullet_id: *bullet_id,
                        reason,
                    }),
                    None => r.applied.push((*bullet_id, *tag)),
                }
            }
            r
        })
        .collect();

    for (k, (&i, r)) in order.iter().zip(resolved).enumerate() {
        let step = base_step + 1 + k as u64;
        for (id, tag) in &r.applied {
            let b = next.get_mut(*id).expect("resolved marks target live bullets");
            match tag {
                MarkTag::Helpful => b.helpful += 1,
                MarkTag::Harmful => b.harmful += 1,
            }
            b.last_touched_step = step;
        }
        reports[i].applied_marks = r.applied.len();
        reports[i].skipped_marks = r.skipped;
    }
    for _ in deltas {
        next.advance_step();
    }
    Ok((next, reports))
}
