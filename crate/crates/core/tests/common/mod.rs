//! Reference models used by the property and acceptance tests.
//!
//! Everything here is written from the merge and refine rules directly,
//! without calling into the code under test except for rendering and
//! embedding, which define the token and similarity measures.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ace_core::delta::{DeltaContext, DeltaOp, MarkTag};
use ace_core::embeddings::{Embedder, HashingEmbedder};
use ace_core::playbook::{BulletId, Playbook};
use ace_core::tokens::TokenCounter;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

pub const SECTIONS: [&str; 3] = ["strategies", "common_failures", "general"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBullet {
    pub section: String,
    pub content: String,
    pub helpful: u64,
    pub harmful: u64,
    pub created: u64,
    pub touched: u64,
}

/// What one merge did, in the oracle's terms.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelReport {
    pub added: Vec<u64>,
    pub applied: usize,
    /// `(id, reason)` with reason `"unknown_id"` or `"same_batch_id"`.
    pub skipped: Vec<(u64, &'static str)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub sections: Vec<String>,
    pub bullets: BTreeMap<u64, ModelBullet>,
    pub next_id: u64,
    pub step: u64,
}

impl Model {
    pub fn of(pb: &Playbook) -> Self {
        Model {
            sections: pb.sections().to_vec(),
            bullets: pb
                .bullets()
                .map(|b| {
                    (
                        b.id.get(),
                        ModelBullet {
                            section: b.section.clone(),
                            content: b.content.clone(),
                            helpful: b.helpful,
                            harmful: b.harmful,
                            created: b.created_step,
                            touched: b.last_touched_step,
                        },
                    )
                })
                .collect(),
            next_id: pb.next_id(),
            step: pb.step(),
        }
    }

    /// Apply one delta: ADDs take fresh ids in op order, MARKs bump counters
    /// on bullets that existed before this delta.
    pub fn apply(&mut self, d: &DeltaContext) -> ModelReport {
        let step = self.step + 1;
        let first_new = self.next_id;
        let adds = d.ops.iter().filter(|o| matches!(o, DeltaOp::Add { .. })).count() as u64;
        let mut r = ModelReport::default();
        for op in &d.ops {
            if let DeltaOp::Add { section, content } = op {
                let section = if self.sections.iter().any(|s| s == section) {
                    section.clone()
                } else {
                    "general".to_string()
                };
                let id = self.next_id;
                self.next_id += 1;
                self.bullets.insert(
                    id,
                    ModelBullet {
                        section,
                        content: content.clone(),
                        helpful: 0,
                        harmful: 0,
                        created: step,
                        touched: step,
                    },
                );
                r.added.push(id);
            }
        }
        for op in &d.ops {
            if let DeltaOp::Mark { bullet_id, tag } = op {
                let n = bullet_id.get();
                if n >= first_new && n < first_new + adds {
                    r.skipped.push((n, "same_batch_id"));
                    continue;
                }
                match self.bullets.get_mut(&n) {
                    Some(b) => {
                        match tag {
                            MarkTag::Helpful => b.helpful += 1,
                            MarkTag::Harmful => b.harmful += 1,
                        }
                        b.touched = step;
                        r.applied += 1;
                    }
                    None => r.skipped.push((n, "unknown_id")),
                }
            }
        }
        self.step = step;
        r
    }

    /// Sequential fold in canonical order; reports in submission order.
    pub fn fold(&mut self, deltas: &[DeltaContext]) -> Vec<ModelReport> {
        let mut idx: Vec<usize> = (0..deltas.len()).collect();
        // Stable sort keeps submission position as the final tie-break.
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (&deltas[a].provenance, &deltas[b].provenance);
            (&pa.sample_id, pa.epoch).cmp(&(&pb.sample_id, pb.epoch))
        });
        let mut out = vec![ModelReport::default(); deltas.len()];
        for i in idx {
            out[i] = self.apply(&deltas[i]);
        }
        out
    }
}

pub fn report_of(r: &ace_core::delta::MergeReport) -> ModelReport {
    ModelReport {
        added: r.added_ids.iter().map(|i| i.get()).collect(),
        applied: r.applied_marks,
        skipped: r
            .skipped_marks
            .iter()
            .map(|s| {
                let reason = match s.reason {
                    ace_core::delta::SkipReason::UnknownId => "unknown_id",
                    ace_core::delta::SkipReason::SameBatchId => "same_batch_id",
                };
                (s.bullet_id.get(), reason)
            })
            .collect(),
    }
}

pub fn id(n: u64) -> BulletId {
    BulletId::new(n).unwrap()
}

const WORDS: [&str; 12] = [
    "check", "units", "before", "answering", "cache", "results", "retry", "failed", "calls",
    "verify", "schema", "first",
];

pub fn phrase(rng: &mut impl Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A playbook with id gaps, arbitrary counters and steps, built from a
/// document so no merge code is involved.
pub fn random_playbook(rng: &mut impl Rng, max_bullets: usize, budget: usize) -> Playbook {
    let n = rng.gen_range(0..=max_bullets);
    let mut bullets = Vec::new();
    let mut next = 1u64;
    let mut step = 0u64;
    for _ in 0..n {
        next += rng.gen_range(0..3);
        let created = rng.gen_range(0..=step + 2);
        let touched = created + rng.gen_range(0..3);
        step = step.max(touched);
        bullets.push(json!({
            "id": format!("pb-{next:05}"),
            "section": SECTIONS.choose(rng).unwrap(),
            "content": phrase(rng, 6),
            "helpful": rng.gen_range(0..5),
            "harmful": rng.gen_range(0..5),
            "created_step": created,
            "last_touched_step": touched,
        }));
        next += 1;
    }
    next += rng.gen_range(0..3);
    let doc = json!({
        "format_version": 1,
        "sections": SECTIONS,
        "next_id": next,
        "step": step,
        "token_budget": budget,
        "bullets": bullets,
    });
    Playbook::from_document(&doc.to_string()).expect("generated document is valid")
}

fn random_tag(rng: &mut impl Rng) -> MarkTag {
    if rng.gen_bool(0.5) {
        MarkTag::Helpful
    } else {
        MarkTag::Harmful
    }
}

/// Deltas whose MARKs hit live, pruned, future and same-delta ids.
pub fn random_deltas(rng: &mut impl Rng, pb: &Playbook, max_deltas: usize) -> Vec<DeltaContext> {
    let n = rng.gen_range(1..=max_deltas);
    let hi = pb.next_id() + 6;
    (0..n)
        .map(|_| {
            let ops = (0..rng.gen_range(0..6))
                .map(|_| {
                    if rng.gen_bool(0.4) {
                        let section = if rng.gen_bool(0.15) { "bogus" } else { SECTIONS.choose(rng).unwrap() };
                        DeltaOp::add(section, phrase(rng, 5))
                    } else {
                        DeltaOp::mark(id(rng.gen_range(1..hi)), random_tag(rng))
                    }
                })
                .collect::<Vec<_>>();
            DeltaContext::new(format!("s{}", rng.gen_range(0..4)), rng.gen_range(0..3), 1).with_ops(ops)
        })
        .collect()
}

/// MARK-only deltas with distinct provenance.
pub fn random_mark_deltas(rng: &mut impl Rng, pb: &Playbook, n: usize) -> Vec<DeltaContext> {
    let hi = pb.next_id() + 3;
    (0..n)
        .map(|k| {
            let ops = (0..rng.gen_range(1..5))
                .map(|_| DeltaOp::mark(id(rng.gen_range(1..hi)), random_tag(rng)))
                .collect::<Vec<_>>();
            DeltaContext::new(format!("m{k:03}"), 0, 1).with_ops(ops)
        })
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Expected dedup outcome: surviving id -> (helpful, harmful), and the
/// absorbed ids.
pub fn dedup_oracle(pb: &Playbook, threshold: f64) -> (BTreeMap<u64, (u64, u64)>, Vec<u64>) {
    let e = HashingEmbedder;
    let bullets: Vec<_> = pb.bullets().collect();
    let vecs: Vec<Vec<f64>> = bullets
        .iter()
        .map(|b| e.embed(&b.content).unwrap().values().to_vec())
        .collect();
    let n = bullets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if bullets[i].section == bullets[j].section && cos(&vecs[i], &vecs[j]) >= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        clusters.entry(r).or_default().push(i);
    }
    let mut kept = BTreeMap::new();
    let mut absorbed = Vec::new();
    for members in clusters.values() {
        let mut best = members[0];
        for &m in members {
            let (b, c) = (bullets[best], bullets[m]);
            if c.helpful > b.helpful || (c.helpful == b.helpful && c.id < b.id) {
                best = m;
            }
        }
        let h = members.iter().map(|&m| bullets[m].helpful).sum();
        let x = members.iter().map(|&m| bullets[m].harmful).sum();
        kept.insert(bullets[best].id.get(), (h, x));
        absorbed.extend(members.iter().filter(|&&m| m != best).map(|&m| bullets[m].id.get()));
    }
    absorbed.sort();
    (kept, absorbed)
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(k);
        for mut p in permutations(rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// A copy of `pb` holding only `keep`, for measuring tokens of a subset.
pub fn subset(pb: &Playbook, keep: &[u64]) -> Playbook {
    let mut doc: serde_json::Value = serde_json::from_str(&pb.to_document()).unwrap();
    let bullets = doc["bullets"].as_array_mut().unwrap();
    bullets.retain(|b| {
        let id: BulletId = b["id"].as_str().unwrap().parse().unwrap();
        keep.contains(&id.get())
    });
    Playbook::from_document(&doc.to_string()).unwrap()
}

/// Prune by brute force: among all removal orders, the one whose sequence
/// of priority keys is lexicographically smallest is the removal order;
/// bullets go in that order while over budget, never the last one.
pub fn prune_oracle(pb: &Playbook, counter: &dyn TokenCounter, budget: usize) -> Vec<u64> {
    let bullets: Vec<_> = pb.bullets().collect();
    let key = |i: usize| {
        let b = bullets[i];
        (b.helpful as i128 - b.harmful as i128, b.helpful, b.last_touched_step, b.id.get())
    };
    let best = permutations((0..bullets.len()).collect())
        .into_iter()
        .min_by(|a, b| a.iter().map(|&i| key(i)).cmp(b.iter().map(|&i| key(i))))
        .unwrap_or_default();
    let mut kept: Vec<u64> = bullets.iter().map(|b| b.id.get()).collect();
    let mut removed = Vec::new();
    for i in best {
        if kept.len() <= 1 || subset(pb, &kept).token_count(counter) <= budget {
            break;
        }
        let victim = bullets[i].id.get();
        kept.retain(|&k| k != victim);
        removed.push(victim);
    }
    removed
}

/// A scripted gateway with the default prompts and local embedder.
pub struct Rig {
    pub gateway: ace_core::llm::Gateway,
    pub prompts: ace_core::roles::Prompts,
    pub embedder: HashingEmbedder,
    pub counter: ace_core::tokens::ProxyTokenCounter,
}

impl Rig {
    pub fn new(set: ace_core::llm::FixtureSet) -> Self {
        use std::sync::Arc;
        Rig {
            gateway: ace_core::llm::Gateway::new(
                Arc::new(ace_core::llm::ScriptedBackend::new(set)),
                Arc::new(ace_core::clock::SimulatedClock::new()),
            ),
            prompts: ace_core::roles::Prompts::default(),
            embedder: HashingEmbedder,
            counter: ace_core::tokens::ProxyTokenCounter,
        }
    }

    pub fn comps<'a>(&'a self, task: &'a dyn ace_core::harness::TaskAdapter) -> ace_core::adaptation::Components<'a> {
        ace_core::adaptation::Components {
            gateway: &self.gateway,
            prompts: &self.prompts,
            role_settings: ace_core::roles::RoleSettings::default(),
            embedder: &self.embedder,
            counter: &self.counter,
            task,
            sections: ace_core::playbook::DEFAULT_SECTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn online(use_ground_truth: bool) -> ace_core::adaptation::AdaptationConfig {
    ace_core::adaptation::AdaptationConfig {
        mode: ace_core::adaptation::Mode::Online,
        use_ground_truth,
        ..Default::default()
    }
}

/// Fraction of correct predictions in `preds`.
pub fn accuracy(preds: &[ace_core::adaptation::Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.correct == Some(true)).count() as f64 / preds.len() as f64
}

/// Dollars per call under [`PRICES`], worked out by hand from the
/// fixture-declared usages (420/36, 510/48, 380/40 tokens).
pub const GENERATOR_CALL_USD: f64 = 0.264;
pub const REFLECTOR_CALL_USD: f64 = 0.327;
pub const CURATOR_CALL_USD: f64 = 0.25;

pub const PRICES: ace_core::llm::PriceTable = ace_core::llm::PriceTable {
    input_per_1k: 0.5,
    output_per_1k: 1.5,
};

pub struct DirRun {
    pub outcome: ace_core::adaptation::AdaptOutcome,
    pub requests: Vec<ace_core::llm::RequestRecord>,
    pub ledger: ace_core::llm::UsageLedger,
    pub summary: ace_core::harness::Summary,
}

/// An online run written to a run directory the way the CLI does it, then
/// summarized by `report`.
pub fn online_run_in_dir(
    root: &std::path::Path,
    task: &dyn ace_core::harness::TaskAdapter,
    set: ace_core::llm::FixtureSet,
    cfg: &ace_core::adaptation::AdaptationConfig,
) -> DirRun {
    use ace_core::rundir::{unix_ms, RunDir, RunManifest, PLAYBOOK};
    let rig = Rig::new(set);
    let mut dir = RunDir::create(root).unwrap();
    let outcome = ace_core::adaptation::online_adapt(&task.samples(), cfg, &rig.comps(task), None, &mut dir).unwrap();
    let requests = rig.gateway.requests();
    let ledger = rig.gateway.ledger();
    dir.write_playbook(PLAYBOOK, &outcome.playbook).unwrap();
    dir.write_requests(&requests).unwrap();
    dir.write_ledger(ledger.clone(), PRICES).unwrap();
    dir.write_manifest(&RunManifest {
        command: "adapt".into(),
        args: Vec::new(),
        config_path: None,
        seed: cfg.seed,
        started_unix_ms: unix_ms(),
        finished_unix_ms: Some(unix_ms()),
        status: "completed".into(),
        error: None,
        artifacts: Vec::new(),
    })
    .unwrap();
    let summary = ace_core::harness::report(root).unwrap();
    DirRun { outcome, requests, ledger, summary }
}
