//! Per-task run traces: one JSON record per line, one file per task.

use std::path::{Path, PathBuf};

use casql_core::schema::DifficultyTier;
use casql_core::search::SolutionReport;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REDACTED: &str = "<redacted>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub question_id: i64,
    pub db_id: String,
    #[serde(default)]
    pub tier: Option<DifficultyTier>,
    pub seed: u64,
    #[serde(default)]
    pub redacted: bool,
    pub report: SolutionReport,
}

pub fn file_name(question_id: i64) -> String {
    format!("task_{question_id}.jsonl")
}

/// Writes the task's trace file, replacing any trace left by an earlier run.
pub fn write(dir: &Path, record: &TraceRecord) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(file_name(record.question_id));
    let mut line = serde_json::to_string(record).expect("trace records serialize");
    line.push('\n');
    std::fs::write(&path, line).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Parses every line of a trace file. A line that is valid JSON but has no
/// `report.buffer` is reported as [`CliError::TraceWithoutBuffer`].
pub fn read_file(path: &Path) -> Result<Vec<TraceRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let where_ = format!("{}:{}", path.display(), i + 1);
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CliError::Dataset(format!("{where_}: {e}")))?;
        if value.pointer("/report/buffer").is_none() {
            return Err(CliError::TraceWithoutBuffer(where_));
        }
        out.push(serde_json::from_value(value).map_err(|e| CliError::Dataset(format!("{where_}: {e}")))?);
    }
    Ok(out)
}

/// Every `*.jsonl` trace in `dir`, ordered by question id.
pub fn read_dir(dir: &Path) -> Result<Vec<TraceRecord>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            out.extend(read_file(&path)?);
        }
    }
    out.sort_by_key(|r| r.question_id);
    Ok(out)
}
