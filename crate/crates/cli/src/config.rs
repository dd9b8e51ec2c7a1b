//! The `ace.toml` run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ace_core::adaptation::{AdaptationConfig, Mode};
use ace_core::clock::{Clock, SimulatedClock, SystemClock};
use ace_core::embeddings::{CachedEmbedder, Embedder, HashingEmbedder, HttpEmbedder, HttpEmbedderConfig};
use ace_core::harness::{ArithEnv, FileTasks, JudgeMode, LookupQa, Sample, TaskAdapter};
use ace_core::llm::{ChatBackend, FixtureSet, Gateway, HttpChatBackend, HttpChatConfig, PriceTable, ScriptedBackend};
use ace_core::playbook::DEFAULT_SECTIONS;
use ace_core::refine::RefinePolicy;
use ace_core::retry::RetryPolicy;
use ace_core::roles::{Prompts, RoleSettings};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub gateway: GatewayConfig,
    pub roles: RolesConfig,
    pub adaptation: AdaptationSection,
    pub refine: RefinePolicy,
    pub playbook: PlaybookSection,
    pub embeddings: EmbeddingsConfig,
    pub task: TaskSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    /// Fixture file for the scripted backend, relative to the config file.
    pub fixtures: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout_s: u64,
    pub max_retries: u32,
    pub prices: PriceTable,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Scripted,
            fixtures: None,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            max_in_flight: 4,
            timeout_s: 120,
            max_retries: RetryPolicy::default().max_retries,
            prices: PriceTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolesConfig {
    /// Overrides the task's own preamble when non-empty.
    pub task_preamble: String,
    pub generator_temperature: f64,
    pub reflector_temperature: f64,
    pub curator_temperature: f64,
    pub max_output_tokens: u32,
    /// Directory of `<role>.v1.txt` template overrides.
    pub templates_dir: Option<PathBuf>,
}

impl Default for RolesConfig {
    fn default() -> Self {
        let d = RoleSettings::default();
        Self {
            task_preamble: d.task_preamble,
            generator_temperature: d.generator_temperature,
            reflector_temperature: d.reflector_temperature,
            curator_temperature: d.curator_temperature,
            max_output_tokens: d.max_output_tokens,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSection {
    pub mode: Mode,
    pub max_epochs: u32,
    pub max_reflection_rounds: u32,
    pub batch_size: usize,
    pub use_ground_truth: bool,
    pub seed: u64,
}

impl Default for AdaptationSection {
    fn default() -> Self {
        let d = AdaptationConfig::default();
        Self {
            mode: d.mode,
            max_epochs: d.max_epochs,
            max_reflection_rounds: d.max_reflection_rounds,
            batch_size: d.batch_size,
            use_ground_truth: d.use_ground_truth,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaybookSection {
    pub sections: Vec<String>,
}

impl Default for PlaybookSection {
    fn default() -> Self {
        Self {
            sections: DEFAULT_SECTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub provider: EmbeddingProvider,
    /// Defaults to the gateway base URL.
    pub base_url: Option<String>,
    pub model: String,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hashing,
            base_url: None,
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    ExactMatch,
    LookupQa,
    ArithEnv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub judge: JudgeMode,
}

impl Config {
    /// Parse `path`, resolve relative paths against its directory and
    /// apply environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(f) = &cfg.gateway.fixtures {
            cfg.gateway.fixtures = Some(base.join(f));
        }
        if let Some(d) = &cfg.roles.templates_dir {
            cfg.roles.templates_dir = Some(base.join(d));
        }
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.adaptation().validate()?;
        if let Err(e) = self.gateway.prices.validate() {
            bail!("gateway.prices: {e}");
        }
        if self.gateway.max_in_flight == 0 {
            bail!("gateway.max_in_flight must be at least 1");
        }
        if self.playbook.sections.is_empty() {
            bail!("playbook.sections must not be empty");
        }
        Ok(())
    }

    /// Endpoint and model settings from `ACE_*` variables. Keys never come
    /// from the file.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var("ACE_API_BASE") {
            self.gateway.base_url = v;
        }
        if let Some(v) = var("ACE_MODEL") {
            self.gateway.model = v;
        }
        if let Some(v) = var("ACE_EMBED_MODEL") {
            self.embeddings.model = v;
        }
    }

    pub fn adaptation(&self) -> AdaptationConfig {
        let a = &self.adaptation;
        AdaptationConfig {
            mode: a.mode,
            max_epochs: a.max_epochs,
            max_reflection_rounds: a.max_reflection_rounds,
            batch_size: a.batch_size,
            refine_policy: self.refine.clone(),
            use_ground_truth: a.use_ground_truth,
            seed: a.seed,
        }
    }

    pub fn role_settings(&self) -> RoleSettings {
        let r = &self.roles;
        RoleSettings {
            task_preamble: r.task_preamble.clone(),
            generator_temperature: r.generator_temperature,
            reflector_temperature: r.reflector_temperature,
            curator_temperature: r.curator_temperature,
            max_output_tokens: r.max_output_tokens,
            max_reflection_rounds: self.adaptation.max_reflection_rounds,
        }
    }

    pub fn prompts(&self) -> Result<Prompts> {
        match &self.roles.templates_dir {
            Some(d) => Prompts::from_dir(d).with_context(|| format!("reading templates from {}", d.display())),
            None => Ok(Prompts::default()),
        }
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.gateway.max_retries,
            ..RetryPolicy::default()
        }
    }

    /// Gateway over the configured backend. `fixtures` overrides the file
    /// named in the config. Scripted runs use a simulated clock so their
    /// logs are reproducible.
    pub fn gateway(&self, fixtures: Option<&Path>) -> Result<Gateway> {
        let (backend, clock): (Arc<dyn ChatBackend>, Arc<dyn Clock>) = match self.gateway.backend {
            BackendKind::Scripted => {
                let path = fixtures
                    .map(Path::to_path_buf)
                    .or_else(|| self.gateway.fixtures.clone())
                    .context("scripted backend needs a fixture file (gateway.fixtures or --fixtures)")?;
                let set = FixtureSet::load(&path)?;
                (Arc::new(ScriptedBackend::new(set)), Arc::new(SimulatedClock::new()))
            }
            BackendKind::Http => {
                let backend = HttpChatBackend::new(HttpChatConfig {
                    base_url: self.gateway.base_url.clone(),
                    model: self.gateway.model.clone(),
                    api_key: std::env::var("ACE_API_KEY").ok(),
                    timeout: Duration::from_secs(self.gateway.timeout_s),
                    retry: self.retry(),
                })?;
                (Arc::new(backend), Arc::new(SystemClock::new()))
            }
        };
        Ok(Gateway::with_max_in_flight(backend, clock, self.gateway.max_in_flight))
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self.embeddings.provider {
            EmbeddingProvider::Hashing => Box::new(HashingEmbedder),
            EmbeddingProvider::Http => Box::new(CachedEmbedder::new(HttpEmbedder::new(HttpEmbedderConfig {
                base_url: self.embeddings.base_url.clone().unwrap_or_else(|| self.gateway.base_url.clone()),
                model: self.embeddings.model.clone(),
                api_key: std::env::var("ACE_API_KEY").ok(),
                timeout: Duration::from_secs(self.gateway.timeout_s),
                retry: self.retry(),
            })?)),
        })
    }

    pub fn task(&self, samples: Vec<Sample>) -> Box<dyn TaskAdapter> {
        match self.task.kind {
            TaskKind::ExactMatch => Box::new(FileTasks::new(samples, self.task.judge)),
            TaskKind::LookupQa => Box::new(LookupQa::from_samples(samples)),
            TaskKind::ArithEnv => Box::new(ArithEnv::from_samples(samples)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.adaptation().max_epochs, 5);
        assert_eq!(cfg.adaptation().batch_size, 1);
    }

    #[test]
    fn sections_and_overrides() {
        let cfg = Config::parse(
            r#"
            [gateway]
            backend = "http"
            model = "m1"
            prices = { input_per_1k = 0.5, output_per_1k = 1.5 }
            [adaptation]
            mode = "online"
            seed = 9
            [refine]
            mode = "proactive"
            dedup_threshold = 0.8
            token_budget = 500
            [task]
            kind = "lookup-qa"
            judge = "strict"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.gateway.backend, BackendKind::Http);
        assert_eq!(cfg.adaptation().mode, Mode::Online);
        assert_eq!(cfg.adaptation().refine_policy.token_budget, 500);
        assert_eq!(cfg.task.kind, TaskKind::LookupQa);
        assert_eq!(cfg.task.judge, JudgeMode::Strict);
        assert_eq!(cfg.gateway.prices.output_per_1k, 1.5);

        let mut cfg = cfg;
        cfg.apply_env(|k| (k == "ACE_MODEL").then(|| "m2".to_string()));
        assert_eq!(cfg.gateway.model, "m2");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::parse("[adaptation]\nmax_epochs = 0").is_err());
        assert!(Config::parse("[refine]\ndedup_threshold = 1.5").is_err());
        assert!(Config::parse("[gateway]\napi_key = \"sk\"").is_err());
        assert!(Config::parse("[nope]").is_err());
        assert!(Config::parse("[gateway.prices]\ninput_per_1k = -1.0").is_err());
    }
}
