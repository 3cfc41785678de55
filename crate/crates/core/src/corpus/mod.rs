//! Per-activity natural-language descriptions and the text side of the shared space.

mod llm;
mod templates;
mod text;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use llm::{
    build_prompt, generate_corpus_file, generate_corpus_via_llm, parse_description_reply, CompletionClient,
    HttpCompletionClient, LlmConfig, SYSTEM_PROMPT,
};
pub use templates::templated_corpus;
pub use text::{fallback_text_encode, TextEmbedding, TextEncoder, TrigramHashEncoder, HASH_BUCKETS};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// The checked-in corpus for the built-in synthetic dataset.
pub const SYNTHETIC_CORPUS_JSON: &str = include_str!("../../assets/synthetic_corpus.json");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus: {0}")]
    Malformed(String),
    #[error("duplicate activity name `{0}`")]
    DuplicateActivity(String),
    #[error("activity `{0}` has an empty description list")]
    EmptyDescriptions(String),
    #[error("activity `{activity}` has an empty description at index {index}")]
    EmptyDescription { activity: String, index: usize },
    #[error("text must be non-empty")]
    EmptyText,
    #[error("text `{0}` encodes to a zero vector")]
    DegenerateText(String),
    #[error("corpus validation failed: {}", format_issues(.0))]
    Invalid(Vec<CorpusIssue>),
    #[error("language model transport failure: {0}")]
    Transport(String),
    #[error("unparseable language model reply: {0}")]
    UnparseableReply(String),
    #[error("language model reply is missing activities: {}", .0.join(", "))]
    IncompleteCoverage(Vec<String>),
    #[error("missing environment variable `{0}` for the API key")]
    MissingApiKey(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "activity", rename_all = "snake_case")]
pub enum CorpusIssue {
    MissingClass(String),
    UnknownActivity(String),
    EmptyDescriptions(String),
    EmptyDescription(String),
}

impl fmt::Display for CorpusIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusIssue::MissingClass(a) => write!(f, "missing class `{a}`"),
            CorpusIssue::UnknownActivity(a) => write!(f, "unknown activity `{a}`"),
            CorpusIssue::EmptyDescriptions(a) => write!(f, "no descriptions for `{a}`"),
            CorpusIssue::EmptyDescription(a) => write!(f, "empty description for `{a}`"),
        }
    }
}

fn format_issues(issues: &[CorpusIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

/// Activity name -> ordered descriptions. Serializes to
/// `{"version":1,"activities":{"<name>":["<desc>",...]}}` with sorted keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DescriptionCorpus {
    pub version: u32,
    pub activities: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawCorpus {
    version: u32,
    #[serde(deserialize_with = "ordered_pairs")]
    activities: Vec<(String, Vec<String>)>,
}

fn ordered_pairs<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<(String, Vec<String>)>, D::Error> {
    struct PairVisitor;
    impl<'de> Visitor<'de> for PairVisitor {
        type Value = Vec<(String, Vec<String>)>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object of activity name to description list")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(entry) = map.next_entry()? {
                out.push(entry);
            }
            Ok(out)
        }
    }
    d.deserialize_map(PairVisitor)
}

impl DescriptionCorpus {
    pub fn new(activities: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let c = Self {
            version: CORPUS_FORMAT_VERSION,
            activities,
        };
        c.check_structure()?;
        Ok(c)
    }

    fn check_structure(&self) -> Result<()> {
        for (name, descs) in &self.activities {
            if descs.is_empty() {
                return Err(CorpusError::EmptyDescriptions(name.clone()));
            }
            if let Some(index) = descs.iter().position(|d| d.trim().is_empty()) {
                return Err(CorpusError::EmptyDescription {
                    activity: name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawCorpus = serde_json::from_str(text).map_err(|e| CorpusError::Malformed(e.to_string()))?;
        let mut activities = BTreeMap::new();
        for (name, descs) in raw.activities {
            if activities.insert(name.clone(), descs).is_some() {
                return Err(CorpusError::DuplicateActivity(name));
            }
        }
        let c = Self {
            version: raw.version,
            activities,
        };
        c.check_structure()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("corpus serializes")
    }

    /// SHA-256 over the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    pub fn descriptions(&self, activity: &str) -> Option<&[String]> {
        self.activities.get(activity).map(|v| v.as_slice())
    }

    /// Keeps the first `n` descriptions of each activity.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let mut activities = BTreeMap::new();
        for (name, descs) in &self.activities {
            if descs.len() < n {
                return Err(CorpusError::Malformed(format!(
                    "activity `{name}` has {} descriptions, {n} requested",
                    descs.len()
                )));
            }
            activities.insert(name.clone(), descs[..n].to_vec());
        }
        Self::new(activities)
    }

    /// One description per activity: the activity name itself.
    pub fn labels_only<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            version: CORPUS_FORMAT_VERSION,
            activities: names
                .iter()
                .map(|n| (n.as_ref().to_string(), vec![n.as_ref().replace('_', " ")]))
                .collect(),
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_corpus(path: &Path) -> Result<DescriptionCorpus> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DescriptionCorpus::parse(&text)
}

pub fn write_corpus(corpus: &DescriptionCorpus, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(corpus).expect("corpus serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Every known class needs at least one non-empty description; names the
/// corpus carries beyond the known classes are flagged.
pub fn validate_corpus<S: AsRef<str>>(corpus: &DescriptionCorpus, known_classes: &[S]) -> std::result::Result<(), Vec<CorpusIssue>> {
    let mut issues = Vec::new();
    for class in known_classes {
        let class = class.as_ref();
        match corpus.activities.get(class) {
            None => issues.push(CorpusIssue::MissingClass(class.to_string())),
            Some(d) if d.is_empty() => issues.push(CorpusIssue::EmptyDescriptions(class.to_string())),
            Some(d) if d.iter().any(|s| s.trim().is_empty()) => {
                issues.push(CorpusIssue::EmptyDescription(class.to_string()))
            }
            Some(_) => {}
        }
    }
    for name in corpus.activities.keys() {
        if !known_classes.iter().any(|k| k.as_ref() == name) {
            issues.push(CorpusIssue::UnknownActivity(name.clone()));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &[&str])]) -> DescriptionCorpus {
        DescriptionCorpus::new(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn missing_class_is_reported() {
        let c = corpus(&[("walking", &["a person walks"])]);
        let err = validate_corpus(&c, &["walking", "running"]).unwrap_err();
        assert_eq!(err, vec![CorpusIssue::MissingClass("running".into())]);
    }

    #[test]
    fn twenty_five_each_is_valid() {
        let descs: Vec<String> = (0..25).map(|i| format!("description {i}")).collect();
        let c = DescriptionCorpus::new(
            [("walking".to_string(), descs.clone()), ("running".to_string(), descs)]
                .into_iter()
                .collect(),
        )
        .unwrap();
        assert!(validate_corpus(&c, &["walking", "running"]).is_ok());
    }

    #[test]
    fn unknown_activity_flagged() {
        let c = corpus(&[("walking", &["x"]), ("flying", &["y"])]);
        assert_eq!(
            validate_corpus(&c, &["walking"]).unwrap_err(),
            vec![CorpusIssue::UnknownActivity("flying".into())]
        );
    }

    #[test]
    fn parse_rejects_duplicates_and_empties() {
        let dup = r#"{"version":1,"activities":{"a":["x"],"a":["y"]}}"#;
        assert!(matches!(DescriptionCorpus::parse(dup), Err(CorpusError::DuplicateActivity(n)) if n == "a"));
        let empty = r#"{"version":1,"activities":{"a":[]}}"#;
        assert!(matches!(DescriptionCorpus::parse(empty), Err(CorpusError::EmptyDescriptions(_))));
        assert!(matches!(DescriptionCorpus::parse("{"), Err(CorpusError::Malformed(_))));
    }

    #[test]
    fn write_load_round_trip() {
        let c = corpus(&[("walking", &["slow walk", "brisk walk"]), ("smoking", &["lifting a cigarette"])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        write_corpus(&c, &p).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = corpus(&[("walking", &["slow walk"])]);
        let b = corpus(&[("walking", &["slow walk"])]);
        let c = corpus(&[("walking", &["slow walk."])]);
        let d = corpus(&[("walkin", &["slow walk"])]);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_ne!(a.content_hash(), d.content_hash());
    }

    #[test]
    fn shipped_synthetic_corpus_is_valid() {
        let c = DescriptionCorpus::parse(SYNTHETIC_CORPUS_JSON).unwrap();
        assert!(validate_corpus(&c, &crate::dataset::SYNTHETIC_ACTIVITIES).is_ok());
        assert!(c.activities.values().all(|d| d.len() == 100));
        assert_eq!(c, templated_corpus(&crate::dataset::SYNTHETIC_ACTIVITIES, 100));
    }
}
