//! On-disk layout of a run.
//!
//! ```text
//! run/
//!   manifest.json          what ran, with which inputs, and where outputs went
//!   config.toml            config snapshot
//!   steps.jsonl            one StepRecord per line (adaptation runs)
//!   eval.jsonl             one EvalResult per line (evaluation runs)
//!   checkpoints/epoch-N.json
//!   playbook.json          final playbook
//!   requests.jsonl         gateway request log
//!   ledger.json            usage ledger, price table and cost
//!   summary.json / summary.txt
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adaptation::{StepObserver, StepRecord};
use crate::harness::EvalResult;
use crate::llm::{cost, CostBreakdown, PriceTable, RequestRecord, UsageLedger};
use crate::playbook::Playbook;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const STEPS: &str = "steps.jsonl";
pub const EVAL: &str = "eval.jsonl";
pub const CHECKPOINTS: &str = "checkpoints";
pub const PLAYBOOK: &str = "playbook.json";
pub const REQUESTS: &str = "requests.jsonl";
pub const LEDGER: &str = "ledger.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `adapt` or `eval`.
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    /// `running`, `completed` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerFile {
    pub ledger: UsageLedger,
    pub prices: PriceTable,
    pub cost: CostBreakdown,
}

impl LedgerFile {
    pub fn new(ledger: UsageLedger, prices: PriceTable) -> Self {
        let cost = cost(&ledger, &prices);
        Self { ledger, prices, cost }
    }
}

pub fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct RunDir {
    root: PathBuf,
    steps: Option<File>,
}

impl RunDir {
    /// Create `root` (and parents). Refuses a directory that already holds
    /// a manifest so one run never overwrites another.
    pub fn create(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        if root.join(MANIFEST).exists() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} already contains a run", root.display()),
            ));
        }
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, steps: None })
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            steps: None,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint_path(&self, epoch: u32) -> PathBuf {
        self.root.join(CHECKPOINTS).join(format!("epoch-{epoch}.json"))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        s.push('\n');
        std::fs::write(self.path(name), s)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> std::io::Result<T> {
        let text = std::fs::read_to_string(self.path(name))?;
        serde_json::from_str(&text).map_err(|e| invalid(name, 0, e))
    }

    pub fn write_lines<T: Serialize>(&self, name: &str, items: &[T]) -> std::io::Result<()> {
        let mut s = String::new();
        for item in items {
            s.push_str(&serde_json::to_string(item).map_err(std::io::Error::other)?);
            s.push('\n');
        }
        std::fs::write(self.path(name), s)
    }

    pub fn read_lines<T: DeserializeOwned>(&self, name: &str) -> std::io::Result<Vec<T>> {
        let f = File::open(self.path(name))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line).map_err(|e| invalid(name, i + 1, e))?);
            }
        }
        Ok(out)
    }

    pub fn write_manifest(&self, m: &RunManifest) -> std::io::Result<()> {
        self.write_json(MANIFEST, m)
    }

    pub fn manifest(&self) -> std::io::Result<RunManifest> {
        self.read_json(MANIFEST)
    }

    pub fn write_playbook(&self, name: &str, pb: &Playbook) -> std::io::Result<()> {
        std::fs::write(self.path(name), pb.to_document())
    }

    pub fn write_requests(&self, log: &[RequestRecord]) -> std::io::Result<()> {
        self.write_lines(REQUESTS, log)
    }

    pub fn write_ledger(&self, ledger: UsageLedger, prices: PriceTable) -> std::io::Result<()> {
        self.write_json(LEDGER, &LedgerFile::new(ledger, prices))
    }

    pub fn write_eval(&self, results: &[EvalResult]) -> std::io::Result<()> {
        self.write_lines(EVAL, results)
    }

    pub fn steps(&self) -> std::io::Result<Vec<StepRecord>> {
        self.read_lines(STEPS)
    }

    /// Artifacts present in the directory, relative paths, sorted.
    pub fn artifacts(&self) -> std::io::Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() {
                for sub in std::fs::read_dir(entry.path())? {
                    out.push(format!("{name}/{}", sub?.file_name().to_string_lossy()));
                }
            } else {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }
}

fn invalid(name: &str, line: usize, e: serde_json::Error) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{name}:{line}: {e}"))
}

impl StepObserver for RunDir {
    fn on_step(&mut self, record: &StepRecord) -> std::io::Result<()> {
        if self.steps.is_none() {
            self.steps = Some(OpenOptions::new().create(true).append(true).open(self.path(STEPS))?);
        }
        let f = self.steps.as_mut().expect("opened above");
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.flush()
    }

    fn on_epoch_end(&mut self, epoch: u32, pb: &Playbook) -> std::io::Result<()> {
        std::fs::create_dir_all(self.root.join(CHECKPOINTS))?;
        std::fs::write(self.checkpoint_path(epoch), pb.to_document())
    }
}
