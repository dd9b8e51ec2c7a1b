//! Desk-scale tasks, evaluation, collapse monitoring and run reports.

mod arith;
mod collapse;
mod eval;
pub mod fixtures;
mod lookup;
mod report;

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arith::{calc_eval, infix_eval, ArithEnv};
pub use collapse::{
    detect_collapse, points_from_records, unexplained, CollapseEvent, TokenPoint,
    DEFAULT_COLLAPSE_THRESHOLD,
};
pub use eval::{run_eval, EvalError, EvalReport, EvalResult};
pub use lookup::LookupQa;
pub use report::{report, ReportError, Summary};

/// One task instance. `label` is the reference answer, when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("task environment failed on {sample_id}: {message}")]
    Environment { sample_id: String, message: String },
    #[error("task file {path}, line {line}: {message}")]
    File {
        path: String,
        line: usize,
        message: String,
    },
}

/// Outcome of running a prediction in the task environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub success: bool,
    pub log: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    /// Case-insensitive, whitespace-collapsed comparison.
    #[default]
    Normalized,
    Strict,
}

pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn exact_match(prediction: &str, label: &str, mode: JudgeMode) -> bool {
    match mode {
        JudgeMode::Strict => prediction == label,
        JudgeMode::Normalized => normalize_answer(prediction) == normalize_answer(label),
    }
}

/// A source of samples plus the rules to score and execute predictions.
pub trait TaskAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn samples(&self) -> Vec<Sample>;

    /// Deterministic correctness check against a reference answer.
    fn judge(&self, prediction: &str, label: &str) -> bool;

    /// Run a prediction in the environment. Sees only the query, never a
    /// label. `Ok(None)` means this task has no execution capability.
    fn execute(&self, _sample_id: &str, _query: &str, _prediction: &str) -> Result<Option<Execution>, TaskError> {
        Ok(None)
    }

    /// Task-specific instructions placed at the top of Generator prompts.
    fn preamble(&self) -> &str {
        ""
    }
}

/// Samples from a line-delimited `{id, query, label?}` file, judged by exact match.
#[derive(Debug, Clone)]
pub struct FileTasks {
    samples: Vec<Sample>,
    mode: JudgeMode,
}

impl FileTasks {
    pub fn new(samples: Vec<Sample>, mode: JudgeMode) -> Self {
        Self { samples, mode }
    }

    pub fn load(path: impl AsRef<Path>, mode: JudgeMode) -> Result<Self, TaskError> {
        Ok(Self::new(load_samples(path)?, mode))
    }
}

impl TaskAdapter for FileTasks {
    fn name(&self) -> &str {
        "exact-match"
    }

    fn samples(&self) -> Vec<Sample> {
        self.samples.clone()
    }

    fn judge(&self, prediction: &str, label: &str) -> bool {
        exact_match(prediction, label, self.mode)
    }
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>, TaskError> {
    let path = path.as_ref();
    let file_err = |line: usize, message: String| TaskError::File {
        path: path.display().to_string(),
        line,
        message,
    };
    let f = std::fs::File::open(path).map_err(|e| file_err(0, e.to_string()))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| file_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| file_err(i + 1, e.to_string()))?;
        if s.id.trim().is_empty() || s.query.trim().is_empty() {
            return Err(file_err(i + 1, "id and query must be non-empty".into()));
        }
        if !seen.insert(s.id.clone()) {
            return Err(file_err(i + 1, format!("duplicate id {:?}", s.id)));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[Sample]) -> std::io::Result<()> {
    let mut s = String::new();
    for sample in samples {
        s.push_str(&serde_json::to_string(sample).expect("sample serializes"));
        s.push('\n');
    }
    std::fs::write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_match() {
        assert!(exact_match("  Paris ", "paris", JudgeMode::Normalized));
        assert!(exact_match("New   York", "new york", JudgeMode::Normalized));
        assert!(!exact_match("Paris", "paris", JudgeMode::Strict));
        assert!(!exact_match("Pariss", "paris", JudgeMode::Normalized));
    }

    #[test]
    fn task_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let samples = vec![
            Sample { id: "a".into(), query: "q1".into(), label: Some("x".into()) },
            Sample { id: "b".into(), query: "q2".into(), label: None },
        ];
        write_samples(&path, &samples).unwrap();
        assert_eq!(load_samples(&path).unwrap(), samples);

        std::fs::write(&path, "{\"id\":\"a\",\"query\":\"q\"}\n{\"id\":\"a\",\"query\":\"q\"}\n").unwrap();
        assert!(matches!(load_samples(&path), Err(TaskError::File { line: 2, .. })));
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(load_samples(&path), Err(TaskError::File { line: 1, .. })));
    }
}
