use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::playbook::Playbook;
use crate::roles::Roles;

use super::{Sample, TaskAdapter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sample_id: String,
    pub prediction: String,
    pub label: String,
    pub correct: bool,
    /// Gateway failure; such samples count as incorrect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub errors: usize,
    pub results: Vec<EvalResult>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("sample {0} has no label")]
    Unlabeled(String),
}

/// Exact-match accuracy of the Generator on `tasks` with a frozen playbook.
/// Samples run concurrently; results keep the input order.
pub fn run_eval(
    pb: &Playbook,
    tasks: &[Sample],
    roles: &Roles,
    task: &dyn TaskAdapter,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    if let Some(s) = tasks.iter().find(|s| s.label.is_none()) {
        return Err(EvalError::Unlabeled(s.id.clone()));
    }
    let results: Vec<EvalResult> = tasks
        .par_iter()
        .map(|s| {
            let label = s.label.clone().expect("checked above");
            match roles.generate(pb, &s.query, &s.id) {
                Ok(traj) => EvalResult {
                    sample_id: s.id.clone(),
                    correct: task.judge(&traj.final_answer, &label),
                    prediction: traj.final_answer,
                    label,
                    error: None,
                },
                Err(e) => EvalResult {
                    sample_id: s.id.clone(),
                    prediction: String::new(),
                    label,
                    correct: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let correct = results.iter().filter(|r| r.correct).count();
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    Ok(EvalReport {
        accuracy: correct as f64 / results.len() as f64,
        correct,
        total: results.len(),
        errors,
        results,
    })
}
