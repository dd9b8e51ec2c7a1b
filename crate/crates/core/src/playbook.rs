//! The evolving context store.
//!
//! A [`Playbook`] is an ordered, sectioned collection of [`Bullet`]s. Each
//! bullet carries a stable identifier and two feedback counters. Playbooks
//! are treated as immutable snapshots: the only way to grow one is through
//! [`crate::delta::merge`], and the only way to shrink one is through the
//! refine operations in [`crate::refine`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tokens::TokenCounter;

/// Current on-disk format version.
pub const FORMAT_VERSION: u32 = 1;

/// Section that receives bullets whose requested section is unknown.
pub const CATCH_ALL_SECTION: &str = "general";

/// Default section taxonomy.
pub const DEFAULT_SECTIONS: [&str; 5] = [
    "strategies",
    "domain_concepts",
    "common_failures",
    "tool_use",
    "general",
];

const ID_PREFIX: &str = "pb-";

#[derive(Debug, thiserror::Error)]
pub enum PlaybookError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported playbook format version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: String },
    #[error("invalid playbook: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Bullet identifier. Canonical text form is `pb-` followed by the number
/// zero-padded to five digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BulletId(u64);

impl BulletId {
    pub fn new(n: u64) -> Option<Self> {
        (n > 0).then_some(Self(n))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for BulletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{ID_PREFIX}{:05}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed bullet id {0:?}")]
pub struct BadId(pub String);

impl FromStr for BulletId {
    type Err = BadId;

    /// Accepts `pb-` followed by one or more ASCII digits, padded or not.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix(ID_PREFIX)
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| BadId(s.to_string()))?;
        digits
            .parse::<u64>()
            .ok()
            .and_then(BulletId::new)
            .ok_or_else(|| BadId(s.to_string()))
    }
}

impl Serialize for BulletId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BulletId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bullet {
    pub id: BulletId,
    pub section: String,
    pub content: String,
    pub helpful: u64,
    pub harmful: u64,
    pub created_step: u64,
    pub last_touched_step: u64,
}

impl Bullet {
    /// `helpful - harmful`, the primary pruning priority.
    pub fn net_score(&self) -> i128 {
        self.helpful as i128 - self.harmful as i128
    }
}

/// A snapshot of the evolving context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Playbook {
    sections: Vec<String>,
    // Keyed by id; ids are allocated monotonically so key order is insertion order.
    bullets: BTreeMap<BulletId, Bullet>,
    next_id: u64,
    token_budget: usize,
    step: u64,
}

impl Playbook {
    pub fn new<S: Into<String>>(
        sections: impl IntoIterator<Item = S>,
        token_budget: usize,
    ) -> Result<Self, PlaybookError> {
        let sections: Vec<String> = sections.into_iter().map(Into::into).collect();
        if sections.is_empty() {
            return Err(PlaybookError::Config("section list is empty".into()));
        }
        if token_budget == 0 {
            return Err(PlaybookError::Config("token budget must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &sections {
            if s.trim().is_empty() {
                return Err(PlaybookError::Config("empty section tag".into()));
            }
            if !seen.insert(s.as_str()) {
                return Err(PlaybookError::Config(format!("duplicate section {s:?}")));
            }
        }
        Ok(Self {
            sections,
            bullets: BTreeMap::new(),
            next_id: 1,
            token_budget,
            step: 0,
        })
    }

    /// Playbook over [`DEFAULT_SECTIONS`].
    pub fn with_default_sections(token_budget: usize) -> Result<Self, PlaybookError> {
        Self::new(DEFAULT_SECTIONS, token_budget)
    }

    pub fn sections(&self) -> &[String] {
        &self.sections
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|s| s == section)
    }

    /// Bullets in insertion order.
    pub fn bullets(&self) -> impl ExactSizeIterator<Item = &Bullet> + DoubleEndedIterator {
        self.bullets.values()
    }

    pub fn get(&self, id: BulletId) -> Option<&Bullet> {
        self.bullets.get(&id)
    }

    pub fn len(&self) -> usize {
        self.bullets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bullets.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Same playbook with a different budget.
    pub fn with_token_budget(mut self, token_budget: usize) -> Result<Self, PlaybookError> {
        if token_budget == 0 {
            return Err(PlaybookError::Config("token budget must be positive".into()));
        }
        self.token_budget = token_budget;
        Ok(self)
    }

    /// Sum of helpful and harmful counters over all bullets.
    pub fn counter_totals(&self) -> (u64, u64) {
        self.bullets
            .values()
            .fold((0, 0), |(h, k), b| (h + b.helpful, k + b.harmful))
    }

    // Mutation is crate-private: deltas and refine ops are the public surface.

    pub(crate) fn allocate_id(&mut self) -> BulletId {
        let id = BulletId(self.next_id);
        self.next_id += 1;
        id
    }

    pub(crate) fn insert(&mut self, bullet: Bullet) {
        debug_assert!(bullet.id.0 < self.next_id);
        debug_assert!(self.has_section(&bullet.section));
        self.bullets.insert(bullet.id, bullet);
    }

    pub(crate) fn get_mut(&mut self, id: BulletId) -> Option<&mut Bullet> {
        self.bullets.get_mut(&id)
    }

    pub(crate) fn remove(&mut self, id: BulletId) -> Option<Bullet> {
        self.bullets.remove(&id)
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    /// Prompt text for the Generator.
    ///
    /// Each section renders as a `## <section>` header followed by its
    /// bullets, one per line as `[<id> helpful=<h> harmful=<k>] <content>`,
    /// or `(empty)` when the section has none. Sections are separated by a
    /// blank line. Backslashes and line breaks inside content are escaped so
    /// that every bullet occupies exactly one line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, section) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str("## ");
            out.push_str(section);
            let mut any = false;
            for b in self.bullets.values().filter(|b| &b.section == section) {
                any = true;
                out.push('\n');
                out.push_str(&render_bullet(b));
            }
            if !any {
                out.push_str("\n(empty)");
            }
        }
        out
    }

    pub fn token_count(&self, counter: &dyn TokenCounter) -> usize {
        counter.count(&self.render())
    }

    /// Canonical serialized document (pretty JSON with a trailing newline).
    pub fn to_document(&self) -> String {
        let doc = PlaybookDoc {
            format_version: FORMAT_VERSION,
            sections: self.sections.clone(),
            next_id: self.next_id,
            step: self.step,
            token_budget: self.token_budget,
            bullets: self.bullets.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("playbook serializes");
        s.push('\n');
        s
    }

    pub fn from_document(text: &str) -> Result<Self, PlaybookError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        match value.get("format_version") {
            None => {
                return Err(PlaybookError::Invalid("missing field `format_version`".into()))
            }
            Some(v) if v.as_u64() == Some(FORMAT_VERSION as u64) => {}
            Some(v) => {
                let found = v
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| v.to_string());
                return Err(PlaybookError::UnsupportedVersion { found });
            }
        }
        // Re-parse from text so serde errors carry line/column positions.
        let doc: PlaybookDoc = serde_json::from_str(text).map_err(parse_error)?;
        doc.into_playbook()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PlaybookError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_document()).map_err(|source| PlaybookError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlaybookError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PlaybookError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_document(&text)
    }
}

pub(crate) fn render_bullet(b: &Bullet) -> String {
    format!(
        "[{} helpful={} harmful={}] {}",
        b.id,
        b.helpful,
        b.harmful,
        escape_content(&b.content)
    )
}

fn escape_content(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn parse_error(e: serde_json::Error) -> PlaybookError {
    PlaybookError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaybookDoc {
    format_version: u32,
    sections: Vec<String>,
    next_id: u64,
    step: u64,
    token_budget: usize,
    bullets: Vec<Bullet>,
}

impl PlaybookDoc {
    fn into_playbook(self) -> Result<Playbook, PlaybookError> {
        let mut pb = Playbook::new(self.sections, self.token_budget)?;
        if self.next_id == 0 {
            return Err(PlaybookError::Invalid("next_id must be positive".into()));
        }
        pb.next_id = self.next_id;
        pb.step = self.step;
        let mut prev: Option<BulletId> = None;
        for b in self.bullets {
            if prev.is_some_and(|p| p >= b.id) {
                return Err(PlaybookError::Invalid(format!(
                    "bullet {} is out of order or duplicated",
                    b.id
                )));
            }
            if b.id.0 >= pb.next_id {
                return Err(PlaybookError::Invalid(format!(
                    "bullet {} is not below next_id {}",
                    b.id, pb.next_id
                )));
            }
            if !pb.has_section(&b.section) {
                return Err(PlaybookError::Invalid(format!(
                    "bullet {} names unknown section {:?}",
                    b.id, b.section
                )));
            }
            if b.content.trim().is_empty() {
                return Err(PlaybookError::Invalid(format!("bullet {} has empty content", b.id)));
            }
            if b.last_touched_step < b.created_step {
                return Err(PlaybookError::Invalid(format!(
                    "bullet {} touched before it was created",
                    b.id
                )));
            }
            prev = Some(b.id);
            pb.bullets.insert(b.id, b);
        }
        Ok(pb)
    }
}
