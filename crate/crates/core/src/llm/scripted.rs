use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CallRecord, LlmBackend, LlmError, LlmRequest, Role};
use crate::util::stable_hash;

/// Which prompts a scenario record answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatcher {
    #[default]
    Any,
    Exact(String),
    Contains(String),
}

impl PromptMatcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Self::Any => true,
            Self::Exact(s) => prompt == s,
            Self::Contains(s) => prompt.contains(s.as_str()),
        }
    }

    fn specificity(&self) -> u8 {
        match self {
            Self::Exact(_) => 2,
            Self::Contains(_) => 1,
            Self::Any => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub role: Role,
    #[serde(rename = "match", default)]
    pub matcher: PromptMatcher,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub response: String,
}

impl ScenarioRecord {
    pub fn any(role: Role, response: impl Into<String>) -> Self {
        Self {
            role,
            matcher: PromptMatcher::Any,
            seed: None,
            response: response.into(),
        }
    }

    pub fn containing(role: Role, needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            role,
            matcher: PromptMatcher::Contains(needle.into()),
            seed: None,
            response: response.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario file {path}, record {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

/// Replays canned responses.
///
/// Lookup order for a request: a record with the exact prompt and seed; any
/// other record pinned to the request's seed; otherwise the unseeded records
/// of the most specific matching kind (exact, then contains, then any),
/// cycled in file order per distinct `(role, prompt)`.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    pinned: HashMap<(Role, String, u64), String>,
    records: Vec<ScenarioRecord>,
    cursors: Mutex<HashMap<(Role, u64), usize>>,
}

impl ScriptedBackend {
    pub fn from_records(records: impl IntoIterator<Item = ScenarioRecord>) -> Self {
        let mut out = Self::default();
        for r in records {
            match (&r.matcher, r.seed) {
                (PromptMatcher::Exact(p), Some(seed)) => {
                    out.pinned.entry((r.role, p.clone(), seed)).or_insert(r.response);
                }
                _ => out.records.push(r),
            }
        }
        out
    }

    /// Exact-prompt, exact-seed records for every successful call.
    pub fn from_calls<'a>(calls: impl IntoIterator<Item = &'a CallRecord>) -> Self {
        Self::from_records(calls.into_iter().filter_map(|c| {
            Some(ScenarioRecord {
                role: c.role,
                matcher: PromptMatcher::Exact(c.prompt.clone()),
                seed: Some(c.seed),
                response: c.response.clone()?,
            })
        }))
    }

    /// Reads a JSON array of records, or one JSON record per line.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: shown.clone(),
            source,
        })?;
        if text.trim_start().starts_with('[') {
            let records: Vec<ScenarioRecord> = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
                path: shown,
                line: e.line(),
                reason: e.to_string(),
            })?;
            return Ok(Self::from_records(records));
        }
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| ScenarioError::Parse {
                path: shown.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.pinned.len() + self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<String, LlmError> {
        let role = request.role;
        let prompt = request.prompt;
        if let Some(r) = self.pinned.get(&(role, prompt.to_string(), request.seed)) {
            return Ok(r.clone());
        }
        let matching = |r: &&ScenarioRecord| r.role == role && r.matcher.matches(prompt);
        if let Some(r) = self
            .records
            .iter()
            .filter(matching)
            .filter(|r| r.seed == Some(request.seed))
            .min_by_key(|r| std::cmp::Reverse(r.matcher.specificity()))
        {
            return Ok(r.response.clone());
        }
        let unseeded: Vec<&ScenarioRecord> = self
            .records
            .iter()
            .filter(matching)
            .filter(|r| r.seed.is_none())
            .collect();
        let Some(best) = unseeded.iter().map(|r| r.matcher.specificity()).max() else {
            return Err(LlmError::NoScriptedResponse {
                role,
                excerpt: prompt.chars().take(80).collect(),
            });
        };
        let pool: Vec<&ScenarioRecord> = unseeded
            .into_iter()
            .filter(|r| r.matcher.specificity() == best)
            .collect();
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let cursor = cursors.entry((role, stable_hash(prompt.as_bytes()))).or_default();
        let picked = pool[*cursor % pool.len()];
        *cursor += 1;
        Ok(picked.response.clone())
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
