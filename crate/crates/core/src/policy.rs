//! White/black/gray privacy policy and a single-writer, wait-free-read store.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("malformed policy JSON: {0}")]
    Malformed(String),
    #[error("policy schema violation: {0}")]
    Schema(String),
    #[error("invalid policy: {}", format_issues(.0))]
    Invalid(Vec<PolicyIssue>),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    White,
    Black,
    Gray,
    Unlisted,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::White => "WHITE",
            Category::Black => "BLACK",
            Category::Gray => "GRAY",
            Category::Unlisted => "UNLISTED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyIssue {
    Overlap { sets: [String; 2], classes: Vec<String> },
    UnknownClass { class: String },
    GrayRequired,
}

impl fmt::Display for PolicyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyIssue::Overlap { sets, classes } => {
                write!(f, "{} and {} overlap on {}", sets[0], sets[1], classes.join(", "))
            }
            PolicyIssue::UnknownClass { class } => write!(f, "unknown class `{class}`"),
            PolicyIssue::GrayRequired => f.write_str("gray required: a non-empty black list needs at least one gray class"),
        }
    }
}

fn format_issues(issues: &[PolicyIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

/// Canonical wire form: `{"version":n,"white":[...],"black":[...],"gray":[...]}`,
/// arrays sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PrivacyPolicy {
    #[serde(default)]
    pub version: u64,
    pub white: BTreeSet<String>,
    pub black: BTreeSet<String>,
    pub gray: BTreeSet<String>,
}

impl PrivacyPolicy {
    pub fn new<S: AsRef<str>>(white: &[S], black: &[S], gray: &[S]) -> Self {
        let set = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        Self {
            version: 0,
            white: set(white),
            black: set(black),
            gray: set(gray),
        }
    }

    pub fn categorize(&self, label: &str) -> Category {
        if self.white.contains(label) {
            Category::White
        } else if self.black.contains(label) {
            Category::Black
        } else if self.gray.contains(label) {
            Category::Gray
        } else {
            Category::Unlisted
        }
    }

    /// Category used by the sanitizer: unlisted labels count as gray unless
    /// `unlisted_as_black` is set.
    pub fn effective_category(&self, label: &str, unlisted_as_black: bool) -> Category {
        match self.categorize(label) {
            Category::Unlisted if unlisted_as_black => Category::Black,
            Category::Unlisted => Category::Gray,
            c => c,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        serde_json::from_value(value).map_err(|e| PolicyError::Schema(e.to_string()))
    }

    pub fn sets(&self) -> (&BTreeSet<String>, &BTreeSet<String>, &BTreeSet<String>) {
        (&self.white, &self.black, &self.gray)
    }
}

pub fn categorize(label: &str, policy: &PrivacyPolicy) -> Category {
    policy.categorize(label)
}

pub fn validate<S: AsRef<str>>(policy: &PrivacyPolicy, known_classes: &[S]) -> std::result::Result<(), Vec<PolicyIssue>> {
    let mut issues = Vec::new();
    let named = [("white", &policy.white), ("black", &policy.black), ("gray", &policy.gray)];
    for i in 0..3 {
        for j in i + 1..3 {
            let both: Vec<String> = named[i].1.intersection(named[j].1).cloned().collect();
            if !both.is_empty() {
                issues.push(PolicyIssue::Overlap {
                    sets: [named[i].0.to_string(), named[j].0.to_string()],
                    classes: both,
                });
            }
        }
    }
    let known: BTreeSet<&str> = known_classes.iter().map(|s| s.as_ref()).collect();
    let mut unknown = BTreeSet::new();
    for (_, set) in named {
        for c in set {
            if !known.contains(c.as_str()) {
                unknown.insert(c.clone());
            }
        }
    }
    issues.extend(unknown.into_iter().map(|class| PolicyIssue::UnknownClass { class }));
    if !policy.black.is_empty() && policy.gray.is_empty() {
        issues.push(PolicyIssue::GrayRequired);
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version: u64,
    pub policy: PrivacyPolicy,
    /// Milliseconds since the Unix epoch.
    pub updated_at: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Readers get wait-free snapshots; writers serialize on a mutex that also
/// guards the history.
pub struct PolicyStore {
    current: ArcSwap<PrivacyPolicy>,
    history: Mutex<Vec<HistoryEntry>>,
    known_classes: Vec<String>,
}

impl fmt::Debug for PolicyStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyStore")
            .field("current", &self.snapshot())
            .field("known_classes", &self.known_classes)
            .finish()
    }
}

impl PolicyStore {
    pub fn new(initial: PrivacyPolicy, known_classes: Vec<String>) -> Result<Self> {
        validate(&initial, &known_classes).map_err(PolicyError::Invalid)?;
        let entry = HistoryEntry {
            version: initial.version,
            policy: initial.clone(),
            updated_at: now_ms(),
        };
        Ok(Self {
            current: ArcSwap::from_pointee(initial),
            history: Mutex::new(vec![entry]),
            known_classes,
        })
    }

    pub fn snapshot(&self) -> Arc<PrivacyPolicy> {
        self.current.load_full()
    }

    pub fn version(&self) -> u64 {
        self.current.load().version
    }

    pub fn known_classes(&self) -> &[String] {
        &self.known_classes
    }

    /// Validates and installs `new_policy` (its version field is ignored)
    /// as version `current + 1`. On error the store is untouched.
    pub fn update(&self, new_policy: PrivacyPolicy) -> Result<HistoryEntry> {
        validate(&new_policy, &self.known_classes).map_err(PolicyError::Invalid)?;
        let mut history = self.history.lock().unwrap_or_else(|e| e.into_inner());
        let version = history.last().map_or(0, |h| h.version) + 1;
        let policy = PrivacyPolicy { version, ..new_policy };
        let entry = HistoryEntry {
            version,
            policy: policy.clone(),
            updated_at: now_ms(),
        };
        history.push(entry.clone());
        self.current.store(Arc::new(policy));
        Ok(entry)
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        self.history.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub fn load_policy(path: &Path) -> Result<PrivacyPolicy> {
    let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PrivacyPolicy::parse(&text)
}

pub fn write_policy(policy: &PrivacyPolicy, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let io = |source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, policy.to_json() + "\n").map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Appends one JSON line per entry to the history sidecar.
pub fn append_history(entries: &[HistoryEntry], path: &Path) -> Result<()> {
    let io = |source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("history serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}
