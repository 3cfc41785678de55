//! Offline corpus generation through a chat-completion endpoint. Never used
//! on the inference path.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_corpus, CorpusError, DescriptionCorpus, Result};

pub const SYSTEM_PROMPT: &str = "You are a prompt generator designed to generate textual description inputs for \
activities as a Python dictionary. Do not provide anything other than a prompt.";

pub trait CompletionClient {
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

/// OpenAI-compatible `chat/completions` client.
pub struct HttpCompletionClient {
    config: LlmConfig,
    api_key: String,
}

impl HttpCompletionClient {
    pub fn from_env(config: LlmConfig) -> Result<Self> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| CorpusError::MissingApiKey(config.api_key_env.clone()))?;
        Ok(Self { config, api_key })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let resp = reqwest::blocking::Client::new()
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| CorpusError::Transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| CorpusError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(CorpusError::Transport(format!("HTTP {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CorpusError::UnparseableReply("reply has no choices[0].message.content".into()))
    }
}

pub fn build_prompt<S: AsRef<str>>(activities: &[S], n_per_class: usize) -> (String, String) {
    let list = activities
        .iter()
        .map(|a| format!("\"{}\"", a.as_ref()))
        .collect::<Vec<_>>()
        .join(", ");
    let user = format!(
        "Generate a dictionary of {n_per_class} descriptions for each activity in the list of activities = [ {list} ]."
    );
    (SYSTEM_PROMPT.to_string(), user)
}

/// Asks the model for descriptions and checks the reply covers every
/// requested activity before returning.
pub fn generate_corpus_via_llm<S: AsRef<str>>(
    activities: &[S],
    n_per_class: usize,
    client: &dyn CompletionClient,
) -> Result<DescriptionCorpus> {
    let (system, user) = build_prompt(activities, n_per_class);
    let reply = client.complete(&system, &user)?;
    let parsed = parse_description_reply(&reply)?;
    let mut missing = Vec::new();
    let mut out = BTreeMap::new();
    for name in activities {
        let name = name.as_ref();
        let hit = parsed
            .iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name.trim()))
            .map(|(_, v)| v);
        match hit {
            Some(descs) if descs.iter().any(|d| !d.trim().is_empty()) => {
                let descs: Vec<String> = descs
                    .iter()
                    .filter(|d| !d.trim().is_empty())
                    .take(n_per_class)
                    .cloned()
                    .collect();
                out.insert(name.to_string(), descs);
            }
            _ => missing.push(name.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(CorpusError::IncompleteCoverage(missing));
    }
    DescriptionCorpus::new(out)
}

/// Generates and writes the corpus; nothing is written on any failure.
pub fn generate_corpus_file<S: AsRef<str>>(
    activities: &[S],
    n_per_class: usize,
    client: &dyn CompletionClient,
    path: &Path,
) -> Result<DescriptionCorpus> {
    let corpus = generate_corpus_via_llm(activities, n_per_class, client)?;
    write_corpus(&corpus, path)?;
    Ok(corpus)
}

/// Accepts JSON or a Python dict literal of `str -> list[str]`, optionally
/// wrapped in a markdown code fence or an assignment.
pub fn parse_description_reply(reply: &str) -> Result<Vec<(String, Vec<String>)>> {
    let start = reply.find('{');
    let end = reply.rfind('}');
    let body = match (start, end) {
        (Some(s), Some(e)) if e > s => &reply[s..=e],
        _ => return Err(CorpusError::UnparseableReply("no dictionary found".into())),
    };
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, Vec<String>>>(body) {
        return Ok(map.into_iter().collect());
    }
    let mut p = DictParser {
        chars: body.chars().collect(),
        pos: 0,
    };
    p.dict().map_err(CorpusError::UnparseableReply)
}

struct DictParser {
    chars: Vec<char>,
    pos: usize,
}

impl DictParser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> std::result::Result<(), String> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            other => Err(format!("expected `{c}` at offset {}, found {other:?}", self.pos)),
        }
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let quote = match self.peek() {
            Some(q @ ('"' | '\'')) => q,
            other => return Err(format!("expected string at offset {}, found {other:?}", self.pos)),
        };
        self.pos += 1;
        let mut out = String::new();
        while let Some(&c) = self.chars.get(self.pos) {
            self.pos += 1;
            match c {
                '\\' => {
                    let esc = *self.chars.get(self.pos).ok_or("dangling escape")?;
                    self.pos += 1;
                    out.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                }
                c if c == quote => return Ok(out),
                c => out.push(c),
            }
        }
        Err("unterminated string".into())
    }

    fn list(&mut self) -> std::result::Result<Vec<String>, String> {
        self.expect('[')?;
        let mut out = Vec::new();
        loop {
            if self.peek() == Some(']') {
                self.pos += 1;
                return Ok(out);
            }
            out.push(self.string()?);
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {}
                other => return Err(format!("expected `,` or `]`, found {other:?}")),
            }
        }
    }

    fn dict(&mut self) -> std::result::Result<Vec<(String, Vec<String>)>, String> {
        self.expect('{')?;
        let mut out = Vec::new();
        loop {
            if self.peek() == Some('}') {
                self.pos += 1;
                return Ok(out);
            }
            let key = self.string()?;
            self.expect(':')?;
            out.push((key, self.list()?));
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {}
                other => return Err(format!("expected `,` or `}}`, found {other:?}")),
            }
        }
    }
}
