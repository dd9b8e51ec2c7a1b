use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rundir::{self, LedgerFile, RunDir};
use crate::roles::GENERATOR_TAG;

use super::{detect_collapse, points_from_records, unexplained, EvalResult, DEFAULT_COLLAPSE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    /// Exact-match accuracy: held-out results for eval runs, the running
    /// predictions for adaptation runs.
    pub accuracy: Option<f64>,
    pub scored: usize,
    /// Generator calls.
    pub rollouts: u64,
    /// Summed per-step wall time of adaptation, seconds.
    pub adaptation_latency_s: Option<f64>,
    pub token_cost: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub steps: usize,
    pub final_playbook_tokens: Option<usize>,
    /// Drops of at least half the playbook not explained by pruning.
    pub unexplained_collapses: usize,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run: {}", self.command);
        match self.accuracy {
            Some(a) => {
                let _ = writeln!(s, "accuracy: {:.4} ({} scored)", a, self.scored);
            }
            None => s.push_str("accuracy: n/a\n"),
        }
        let _ = writeln!(s, "rollouts: {}", self.rollouts);
        match self.adaptation_latency_s {
            Some(l) => {
                let _ = writeln!(s, "adaptation latency: {l:.1} s");
            }
            None => s.push_str("adaptation latency: n/a\n"),
        }
        let _ = writeln!(
            s,
            "token cost: ${:.4} ({} input, {} output tokens)",
            self.token_cost, self.input_tokens, self.output_tokens
        );
        if self.steps > 0 {
            let _ = writeln!(s, "steps: {}", self.steps);
        }
        if let Some(t) = self.final_playbook_tokens {
            let _ = writeln!(s, "final playbook tokens: {t}");
        }
        let _ = writeln!(s, "unexplained collapses: {}", self.unexplained_collapses);
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("run directory {dir} is missing: {}", missing.join(", "))]
    MissingArtifacts { dir: String, missing: Vec<String> },
    #[error("reading run directory: {0}")]
    Io(#[from] std::io::Error),
}

/// Summarize a finished run and write `summary.json` and `summary.txt`.
pub fn report(run_dir: impl AsRef<Path>) -> Result<Summary, ReportError> {
    let dir = RunDir::open(run_dir.as_ref());
    let missing_err = |missing: Vec<&str>| ReportError::MissingArtifacts {
        dir: dir.root().display().to_string(),
        missing: missing.into_iter().map(String::from).collect(),
    };
    let mut missing: Vec<&str> = [rundir::MANIFEST, rundir::LEDGER]
        .into_iter()
        .filter(|n| !dir.path(n).is_file())
        .collect();
    if !missing.is_empty() {
        if !dir.path(rundir::STEPS).is_file() {
            missing.push(rundir::STEPS);
        }
        return Err(missing_err(missing));
    }
    let manifest = dir.manifest()?;
    let is_eval = manifest.command == "eval";
    let log = if is_eval { rundir::EVAL } else { rundir::STEPS };
    if !dir.path(log).is_file() {
        return Err(missing_err(vec![log]));
    }
    let ledger: LedgerFile = dir.read_json(rundir::LEDGER)?;
    let totals = ledger.ledger.totals();

    let mut summary = Summary {
        command: manifest.command.clone(),
        accuracy: None,
        scored: 0,
        rollouts: ledger.ledger.tag(GENERATOR_TAG).calls,
        adaptation_latency_s: None,
        token_cost: ledger.cost.total,
        input_tokens: totals.input_tokens,
        output_tokens: totals.output_tokens,
        steps: 0,
        final_playbook_tokens: None,
        unexplained_collapses: 0,
    };
    if is_eval {
        let results: Vec<EvalResult> = dir.read_lines(rundir::EVAL)?;
        summary.scored = results.len();
        if !results.is_empty() {
            summary.accuracy = Some(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64);
        }
    } else {
        let steps = dir.steps()?;
        let scored: Vec<bool> = steps.iter().filter_map(|s| s.correct).collect();
        summary.scored = scored.len();
        if !scored.is_empty() {
            summary.accuracy = Some(scored.iter().filter(|c| **c).count() as f64 / scored.len() as f64);
        }
        summary.steps = steps.len();
        summary.adaptation_latency_s = Some(steps.iter().map(|s| s.wall_ms).sum::<u64>() as f64 / 1000.0);
        summary.final_playbook_tokens = steps.last().map(|s| s.playbook_tokens);
        let events = detect_collapse(&points_from_records(&steps), DEFAULT_COLLAPSE_THRESHOLD);
        summary.unexplained_collapses = unexplained(&events).len();
    }
    dir.write_json(rundir::SUMMARY_JSON, &summary)?;
    std::fs::write(dir.path(rundir::SUMMARY_TXT), summary.to_text())?;
    Ok(summary)
}
