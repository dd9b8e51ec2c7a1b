//! Offline (multi-epoch) and online (predict, then update) adaptation loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delta::{canonical_order, merge_batch, DeltaContext, DeltaError, MergeReport, Provenance};
use crate::embeddings::Embedder;
use crate::harness::{Sample, TaskAdapter};
use crate::llm::{Gateway, TagTotals};
use crate::playbook::{Playbook, PlaybookError};
use crate::refine::{maybe_refine, RefineError, RefinePolicy, RefineReport};
use crate::roles::{
    playbook_digest, Feedback, Prompts, RoleError, RoleSettings, Roles, DEFAULT_MAX_REFLECTION_ROUNDS,
    GENERATOR_TAG,
};
use crate::tokens::TokenCounter;

pub const DEFAULT_MAX_EPOCHS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Offline,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub mode: Mode,
    pub max_epochs: u32,
    pub max_reflection_rounds: u32,
    /// Samples whose deltas are merged together.
    pub batch_size: usize,
    pub refine_policy: RefinePolicy,
    pub use_ground_truth: bool,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Offline,
            max_epochs: DEFAULT_MAX_EPOCHS,
            max_reflection_rounds: DEFAULT_MAX_REFLECTION_ROUNDS,
            batch_size: 1,
            refine_policy: RefinePolicy::default(),
            use_ground_truth: true,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.max_reflection_rounds == 0 {
            return bad("max_reflection_rounds must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        self.refine_policy
            .validate()
            .map_err(|e| AdaptError::Config(e.to_string()))
    }
}

/// Everything the loop calls into. Roles run on `gateway`; `task` supplies
/// judging and execution feedback.
pub struct Components<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a Prompts,
    pub role_settings: RoleSettings,
    pub embedder: &'a dyn Embedder,
    pub counter: &'a dyn TokenCounter,
    pub task: &'a dyn TaskAdapter,
    /// Sections of the playbook created when no warmup is given.
    pub sections: Vec<String>,
}

/// One processed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based, strictly increasing over the run.
    pub step: u64,
    /// 1-based epoch in offline mode, 0 in online mode.
    pub epoch: u32,
    pub sample_id: String,
    pub predicted_answer: String,
    pub correct: Option<bool>,
    /// `ground_truth`, `execution_success`, `execution_failure` or `none`.
    pub feedback: String,
    /// Playbook step the prediction was made against.
    pub context_step: u64,
    /// Playbook step produced by merging this sample's delta.
    pub merge_step: Option<u64>,
    pub reflection_rounds: u32,
    pub insights: usize,
    pub merge: Option<MergeReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub playbook_tokens: usize,
    pub playbook_bullets: usize,
    pub rollouts_so_far: u64,
    pub wall_ms: u64,
    /// Gateway totals after this step.
    pub usage: TagTotals,
    /// Set on the first record of a batch whose refine pass ran.
    pub refine: Option<RefineReport>,
    /// Why the sample contributed no delta, if it was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub answer: String,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub playbook: Playbook,
    pub steps: Vec<StepRecord>,
    pub predictions: Vec<Prediction>,
    pub epochs_run: u32,
}

/// State reached before a run aborted.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRun {
    pub playbook: Playbook,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("invalid adaptation config: {0}")]
    Config(String),
    #[error("no tasks to adapt on")]
    NoTasks,
    #[error(transparent)]
    Playbook(#[from] PlaybookError),
    #[error("run aborted after {} steps: {source}", partial.steps.len())]
    Aborted {
        partial: Box<PartialRun>,
        source: RoleError,
    },
    #[error("refine failed after {} steps: {source}", partial.steps.len())]
    Refine {
        partial: Box<PartialRun>,
        source: RefineError,
    },
    #[error("merge failed: {0}")]
    Merge(#[from] DeltaError),
    #[error("step observer failed: {0}")]
    Observer(#[source] std::io::Error),
}

impl AdaptError {
    pub fn partial(&self) -> Option<&PartialRun> {
        match self {
            AdaptError::Aborted { partial, .. } | AdaptError::Refine { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Sink for progress as it happens, e.g. a run directory.
pub trait StepObserver {
    fn on_step(&mut self, _record: &StepRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: u32, _pb: &Playbook) -> std::io::Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl StepObserver for NoObserver {}

/// Multi-epoch adaptation over a fixed task list, starting from an empty
/// playbook. Each epoch visits the tasks in an order shuffled from
/// `cfg.seed`; the run stops early after an epoch that neither added a
/// bullet nor applied a mark.
pub fn offline_adapt(
    tasks: &[Sample],
    cfg: &AdaptationConfig,
    comps: &Components,
    observer: &mut dyn StepObserver,
) -> Result<AdaptOutcome, AdaptError> {
    cfg.validate()?;
    if cfg.mode != Mode::Offline {
        return Err(AdaptError::Config("offline_adapt needs mode = offline".into()));
    }
    if tasks.is_empty() {
        return Err(AdaptError::NoTasks);
    }
    let pb = Playbook::new(comps.sections.iter().cloned(), cfg.refine_policy.token_budget)?;
    let mut run = Runner::new(cfg, comps, pb, observer);
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(tasks.len(), cfg.seed, epoch);
        let mut changes = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &tasks[i]).collect();
            changes += run.batch(&batch, epoch)?;
        }
        epochs_run = epoch;
        run.observer.on_epoch_end(epoch, &run.pb).map_err(AdaptError::Observer)?;
        if changes == 0 {
            tracing::info!(epoch, "epoch made no playbook changes, stopping");
            break;
        }
    }
    Ok(run.finish(epochs_run))
}

/// Task order for one epoch: a permutation seeded by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Single pass over a stream in its given order. Each prediction is made
/// against the playbook as it stood before that sample was learned from.
pub fn online_adapt(
    stream: &[Sample],
    cfg: &AdaptationConfig,
    comps: &Components,
    warmup: Option<Playbook>,
    observer: &mut dyn StepObserver,
) -> Result<AdaptOutcome, AdaptError> {
    cfg.validate()?;
    if cfg.mode != Mode::Online {
        return Err(AdaptError::Config("online_adapt needs mode = online".into()));
    }
    let pb = match warmup {
        Some(pb) => pb,
        None => Playbook::new(comps.sections.iter().cloned(), cfg.refine_policy.token_budget)?,
    };
    let mut run = Runner::new(cfg, comps, pb, observer);
    for chunk in stream.chunks(cfg.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        run.batch(&batch, 0)?;
    }
    Ok(run.finish(0))
}

struct Runner<'r, 'c> {
    cfg: &'r AdaptationConfig,
    comps: &'r Components<'c>,
    settings: RoleSettings,
    pb: Playbook,
    steps: Vec<StepRecord>,
    predictions: Vec<Prediction>,
    observer: &'r mut dyn StepObserver,
}

/// What one sample's role pipeline produced.
struct SampleOutcome {
    prediction: String,
    correct: Option<bool>,
    feedback: &'static str,
    reflection_rounds: u32,
    insights: usize,
    delta: Option<DeltaContext>,
    warnings: Vec<String>,
    skipped: Option<String>,
    wall_ms: u64,
}

impl<'r, 'c> Runner<'r, 'c> {
    fn new(
        cfg: &'r AdaptationConfig,
        comps: &'r Components<'c>,
        pb: Playbook,
        observer: &'r mut dyn StepObserver,
    ) -> Self {
        let mut settings = comps.role_settings.clone();
        settings.max_reflection_rounds = cfg.max_reflection_rounds;
        if settings.task_preamble.is_empty() {
            settings.task_preamble = comps.task.preamble().to_string();
        }
        Self {
            cfg,
            comps,
            settings,
            pb,
            steps: Vec::new(),
            predictions: Vec::new(),
            observer,
        }
    }

    fn finish(self, epochs_run: u32) -> AdaptOutcome {
        AdaptOutcome {
            playbook: self.pb,
            steps: self.steps,
            predictions: self.predictions,
            epochs_run,
        }
    }

    fn partial(&self) -> Box<PartialRun> {
        Box::new(PartialRun {
            playbook: self.pb.clone(),
            steps: self.steps.clone(),
        })
    }

    /// Process one batch; returns added bullets plus applied marks.
    fn batch(&mut self, batch: &[&Sample], epoch: u32) -> Result<usize, AdaptError> {
        let roles = Roles {
            gateway: self.comps.gateway,
            prompts: self.comps.prompts,
            settings: &self.settings,
        };
        let context_step = self.pb.step();
        let (cfg, comps, pb) = (self.cfg, self.comps, &self.pb);
        let outcomes: Vec<Result<SampleOutcome, RoleError>> = if batch.len() == 1 {
            vec![pipeline(cfg, comps, pb, &roles, batch[0], epoch)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|sample| s.spawn(|| pipeline(cfg, comps, pb, &roles, sample, epoch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("role pipeline panicked"))
                    .collect()
            })
        };
        let mut done = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                Ok(o) => done.push(o),
                Err(source) => {
                    return Err(AdaptError::Aborted {
                        partial: self.partial(),
                        source,
                    })
                }
            }
        }

        let mut deltas = Vec::new();
        let mut delta_of = vec![None; done.len()];
        for (i, o) in done.iter_mut().enumerate() {
            if let Some(d) = o.delta.take() {
                delta_of[i] = Some(deltas.len());
                deltas.push(d);
            }
        }
        let (merged, reports) = merge_batch(&self.pb, &deltas)?;
        let mut rank = vec![0u64; deltas.len()];
        for (pos, &i) in canonical_order(&deltas).iter().enumerate() {
            rank[i] = pos as u64;
        }
        let changes: usize = reports.iter().map(|r| r.added_ids.len() + r.applied_marks).sum();
        let refined = maybe_refine(&merged, &self.cfg.refine_policy, self.comps.embedder, self.comps.counter);
        self.pb = merged;
        let (pb, mut refine) = refined.map_err(|source| AdaptError::Refine {
            partial: self.partial(),
            source,
        })?;
        self.pb = pb;

        let tokens = self.pb.token_count(self.comps.counter);
        let ledger = self.comps.gateway.ledger();
        let rollouts = ledger.tag(GENERATOR_TAG).calls;
        let usage = ledger.totals();
        let mut reports: Vec<Option<MergeReport>> = reports.into_iter().map(Some).collect();
        for (sample, (o, d)) in batch.iter().zip(done.into_iter().zip(delta_of)) {
            let rec = StepRecord {
                step: self.steps.len() as u64 + 1,
                epoch,
                sample_id: sample.id.clone(),
                predicted_answer: o.prediction.clone(),
                correct: o.correct,
                feedback: o.feedback.to_string(),
                context_step,
                merge_step: d.map(|d| context_step + 1 + rank[d]),
                reflection_rounds: o.reflection_rounds,
                insights: o.insights,
                merge: d.and_then(|d| reports[d].take()),
                warnings: o.warnings,
                playbook_tokens: tokens,
                playbook_bullets: self.pb.len(),
                rollouts_so_far: rollouts,
                wall_ms: o.wall_ms,
                usage,
                refine: refine.take(),
                skipped: o.skipped,
            };
            self.observer.on_step(&rec).map_err(AdaptError::Observer)?;
            self.predictions.push(Prediction {
                sample_id: rec.sample_id.clone(),
                answer: o.prediction,
                correct: o.correct,
            });
            self.steps.push(rec);
        }
        Ok(changes)
    }
}

fn pipeline(
    cfg: &AdaptationConfig,
    comps: &Components,
    pb: &Playbook,
    roles: &Roles,
    sample: &Sample,
    epoch: u32,
) -> Result<SampleOutcome, RoleError> {
    let clock = comps.gateway.clock();
    let t0 = clock.now_ms();
    let traj = roles.generate(pb, &sample.query, &sample.id)?;
    let correct = sample
        .label
        .as_deref()
        .map(|l| comps.task.judge(&traj.final_answer, l));
    let mut out = SampleOutcome {
        prediction: traj.final_answer.clone(),
        correct,
        feedback: "none",
        reflection_rounds: 0,
        insights: 0,
        delta: None,
        warnings: Vec::new(),
        skipped: None,
        wall_ms: 0,
    };
    let feedback = match (&sample.label, cfg.use_ground_truth) {
        (Some(label), true) => Feedback::GroundTruth {
            expected: label.clone(),
        },
        _ => match comps.task.execute(&sample.id, &sample.query, &traj.final_answer) {
            Ok(Some(e)) => Feedback::Execution {
                success: e.success,
                log: e.log,
            },
            Ok(None) => Feedback::None,
            Err(e) => {
                tracing::warn!(sample_id = %sample.id, "skipping sample: {e}");
                out.skipped = Some(e.to_string());
                out.wall_ms = clock.now_ms().saturating_sub(t0);
                return Ok(out);
            }
        },
    };
    out.feedback = match &feedback {
        Feedback::GroundTruth { .. } => "ground_truth",
        Feedback::Execution { success: true, .. } => "execution_success",
        Feedback::Execution { success: false, .. } => "execution_failure",
        Feedback::None => "none",
    };
    let reflection = roles.reflect_loop(&traj, &feedback, pb.sections(), &sample.id)?;
    let provenance = Provenance {
        sample_id: sample.id.clone(),
        epoch,
        role_round: reflection.round,
    };
    let curated = roles.curate(&reflection, &playbook_digest(pb), pb.sections(), provenance)?;
    out.reflection_rounds = reflection.round;
    out.insights = reflection.insights.len();
    out.warnings = curated.warnings;
    match curated.delta.validate() {
        Ok(()) => out.delta = Some(curated.delta),
        Err(e) => {
            out.warnings.push(format!("delta dropped: {e}"));
            out.skipped = Some(format!("invalid delta: {e}"));
        }
    }
    out.wall_ms = clock.now_ms().saturating_sub(t0);
    Ok(out)
}
