use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{exact_match, normalize_answer, Execution, JudgeMode, Sample, TaskAdapter, TaskError};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "sa", "tu", "vo", "zel", "bri", "dan", "fo", "gu", "ith", "nor", "pe", "qua",
];

/// Key/value recall. The answer to each query exists nowhere except in the
/// fact table, so a model can only answer once the fact is in its playbook.
#[derive(Debug, Clone)]
pub struct LookupQa {
    facts: Vec<(String, String)>,
    samples: Vec<Sample>,
    universe: BTreeSet<String>,
}

impl LookupQa {
    /// `n_facts` facts and a stream of `n_samples` queries, keys drawn
    /// uniformly with replacement.
    pub fn new(n_facts: usize, n_samples: usize, seed: u64) -> Self {
        assert!(n_facts > 0, "lookup-qa needs at least one fact");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = n_facts.to_string().len().max(2);
        let mut universe = BTreeSet::new();
        let mut facts = Vec::with_capacity(n_facts);
        for i in 1..=n_facts {
            let value = loop {
                let word: String = (0..3).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
                let v = format!("{word}-{:03}", rng.gen_range(100..1000));
                if universe.insert(v.clone()) {
                    break v;
                }
            };
            facts.push((format!("key-{i:0width$}"), value));
        }
        let samples = (0..n_samples)
            .map(|i| {
                let (key, value) = &facts[rng.gen_range(0..n_facts)];
                Sample {
                    id: format!("lq-{:04}", i + 1),
                    query: Self::question(key),
                    label: Some(value.clone()),
                }
            })
            .collect();
        Self {
            facts,
            samples,
            universe,
        }
    }

    /// Adapter over externally supplied samples; the value universe is the
    /// set of labels present in the file.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let universe = samples.iter().filter_map(|s| s.label.as_deref()).map(normalize_answer).collect();
        Self {
            facts: Vec::new(),
            samples,
            universe,
        }
    }

    pub fn question(key: &str) -> String {
        format!("What is the value of {key}?")
    }

    /// The sentence a playbook entry needs for the fact to be usable.
    pub fn fact_sentence(key: &str, value: &str) -> String {
        format!("The value of {key} is {value}.")
    }

    pub fn facts(&self) -> &[(String, String)] {
        &self.facts
    }

    fn well_formed(answer: &str) -> bool {
        match answer.rsplit_once('-') {
            Some((word, num)) => {
                !word.is_empty()
                    && word.chars().all(|c| c.is_ascii_lowercase())
                    && num.len() == 3
                    && num.chars().all(|c| c.is_ascii_digit())
            }
            None => false,
        }
    }
}

impl TaskAdapter for LookupQa {
    fn name(&self) -> &str {
        "lookup-qa"
    }

    fn samples(&self) -> Vec<Sample> {
        self.samples.clone()
    }

    fn judge(&self, prediction: &str, label: &str) -> bool {
        exact_match(prediction, label, JudgeMode::Normalized)
    }

    /// Checks format and catalog membership only: a well-formed value that
    /// belongs to another key still passes.
    fn execute(&self, _sample_id: &str, _query: &str, prediction: &str) -> Result<Option<Execution>, TaskError> {
        let answer = normalize_answer(prediction);
        let (success, log) = if !Self::well_formed(&answer) {
            (false, format!("verifier: {answer:?} is not a catalog value (expected the form word-123)"))
        } else if !self.universe.contains(&answer) {
            (false, format!("verifier: {answer:?} is not in the catalog"))
        } else {
            (true, format!("verifier: {answer:?} is a catalog value"))
        };
        Ok(Some(Execution { success, log }))
    }

    fn preamble(&self) -> &str {
        "You answer questions about catalog keys. Answer with the value only."
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = LookupQa::new(20, 40, 7);
        let b = LookupQa::new(20, 40, 7);
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.facts(), b.facts());
        assert_eq!(a.universe.len(), 20);
        assert_eq!(a.facts()[0].0, "key-01");
        assert_ne!(LookupQa::new(20, 40, 8).samples(), a.samples());
        for s in a.samples() {
            let label = s.label.unwrap();
            let key = &a.facts().iter().find(|(_, v)| *v == label).unwrap().0;
            assert_eq!(s.query, LookupQa::question(key));
        }
    }

    #[test]
    fn verifier_checks_format_and_membership() {
        let t = LookupQa::new(3, 1, 1);
        let v = t.facts()[1].1.clone();
        let run = |p: &str| t.execute("x", "q", p).unwrap().unwrap().success;
        assert!(run(&v));
        assert!(run(&v.to_uppercase()));
        assert!(!run("unknown"));
        assert!(!run("zzzz-999"));
    }
}
