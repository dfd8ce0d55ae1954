//! Development-set loading and scoring with execution accuracy and Soft F1.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::{canonical_cell, execute, output_key, CanonicalCell, Limits, Value};
use crate::schema::{DifficultyTier, Task};
use crate::sqltext::has_outer_order_by;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset not found: {0}")]
    MissingDataset(String),
    #[error("cannot parse {path}: {reason}")]
    UnreadableDataset { path: String, reason: String },
    #[error("gold query failed: {0}")]
    GoldFailed(String),
}

/// Tasks from `dev.json` plus the number of records that were skipped.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub root: PathBuf,
    pub tasks: Vec<Task>,
    pub skipped: usize,
}

impl DevSet {
    pub fn db_path(&self, db_id: &str) -> PathBuf {
        db_path(&self.root, db_id)
    }
}

/// `<root>/dev_databases/<db_id>/<db_id>.sqlite`
pub fn db_path(root: &Path, db_id: &str) -> PathBuf {
    root.join("dev_databases").join(db_id).join(format!("{db_id}.sqlite"))
}

/// Reads `dev.json`. Records without a database id or question are skipped
/// and counted; a missing `question_id` falls back to the record index.
pub fn load_bird_dev(root: &Path) -> Result<DevSet, EvalError> {
    let file = root.join("dev.json");
    if !file.is_file() || !root.join("dev_databases").is_dir() {
        return Err(EvalError::MissingDataset(root.display().to_string()));
    }
    let text = std::fs::read_to_string(&file).map_err(|e| EvalError::UnreadableDataset {
        path: file.display().to_string(),
        reason: e.to_string(),
    })?;
    let records: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| EvalError::UnreadableDataset {
        path: file.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut tasks = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for (i, rec) in records.iter().enumerate() {
        match task_from_record(rec, i) {
            Some(t) => tasks.push(t),
            None => {
                tracing::warn!(record = i, "skipping malformed dev.json record");
                skipped += 1;
            }
        }
    }
    Ok(DevSet {
        root: root.to_path_buf(),
        tasks,
        skipped,
    })
}

fn task_from_record(rec: &serde_json::Value, index: usize) -> Option<Task> {
    let text = |k: &str| rec.get(k).and_then(|v| v.as_str()).map(str::to_string);
    let db_id = text("db_id").filter(|s| !s.trim().is_empty())?;
    let question = text("question").filter(|s| !s.trim().is_empty())?;
    let question_id = match rec.get("question_id") {
        None => index as i64,
        Some(v) => v.as_i64()?,
    };
    let difficulty_tier = match text("difficulty") {
        Some(d) => Some(d.parse().ok()?),
        None => None,
    };
    Some(Task {
        question_id,
        db_id,
        question,
        hint: text("evidence").unwrap_or_default(),
        gold_sql: text("SQL"),
        difficulty_tier,
    })
}

/// Whether `pred` produces the same output as `gold`. Row order matters
/// only when the gold query has an outermost ORDER BY.
pub fn execution_accuracy(pred: &str, gold: &str, db: &Path, limits: Limits) -> Result<bool, EvalError> {
    let gold_result = execute(gold, db, limits);
    if let Some(e) = &gold_result.error {
        return Err(EvalError::GoldFailed(e.to_string()));
    }
    let pred_result = execute(pred, db, limits);
    if pred_result.error.is_some() {
        return Ok(false);
    }
    let ordered = has_outer_order_by(gold);
    Ok(output_key(&pred_result, ordered).ok() == output_key(&gold_result, ordered).ok())
}

/// Partial-credit F1 between two result sets.
///
/// Rows are compared as multisets of normalized cells. Every (pred, gold)
/// row pair with any shared cell is scored `overlap / max(len)`, and pairs
/// are matched greedily by score, then pred index, then gold index. With
/// `m` matched pairs:
///
/// * `tp` is the sum of matched scores,
/// * `fp` is `|pred| - m` plus, per matched pair, `1 - overlap / len(pred row)`,
/// * `fn` is `|gold| - m` plus, per matched pair, `1 - overlap / len(gold row)`,
///
/// and the result is `2tp / (2tp + fp + fn)`. Two empty outputs score 1.
pub fn soft_f1(pred_rows: &[Vec<Value>], gold_rows: &[Vec<Value>]) -> f64 {
    if pred_rows.is_empty() && gold_rows.is_empty() {
        return 1.0;
    }
    if pred_rows.is_empty() || gold_rows.is_empty() {
        return 0.0;
    }
    let norm = |rows: &[Vec<Value>]| -> Vec<HashMap<CanonicalCell, usize>> {
        rows.iter()
            .map(|r| {
                let mut counts = HashMap::new();
                for c in r {
                    *counts.entry(canonical_cell(c)).or_insert(0) += 1;
                }
                counts
            })
            .collect()
    };
    let pred = norm(pred_rows);
    let gold = norm(gold_rows);

    let mut pairs: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let overlap: usize = p
                .iter()
                .map(|(cell, n)| (*n).min(g.get(cell).copied().unwrap_or(0)))
                .sum();
            let longest = pred_rows[i].len().max(gold_rows[j].len());
            if longest == 0 {
                pairs.push((1.0, i, j, 0));
            } else if overlap > 0 {
                pairs.push((overlap as f64 / longest as f64, i, j, overlap));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; pred.len()];
    let mut gold_used = vec![false; gold.len()];
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    let mut matched = 0usize;
    for (frac, i, j, overlap) in pairs {
        if pred_used[i] || gold_used[j] {
            continue;
        }
        pred_used[i] = true;
        gold_used[j] = true;
        matched += 1;
        tp += frac;
        let deficit = |len: usize| {
            if len == 0 {
                0.0
            } else {
                1.0 - overlap as f64 / len as f64
            }
        };
        fp += deficit(pred_rows[i].len());
        fn_ += deficit(gold_rows[j].len());
    }
    fp += (pred.len() - matched) as f64;
    fn_ += (gold.len() - matched) as f64;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: i64,
    pub db_id: String,
    pub tier: Option<DifficultyTier>,
    pub predicted_sql: Option<String>,
    pub gold_sql: String,
    pub ex: bool,
    pub soft_f1: f64,
    /// False when the gold query itself failed; such records are excluded
    /// from every denominator.
    pub valid: bool,
    pub note: String,
}

/// Scores one prediction. A missing prediction or a failing one scores zero.
pub fn evaluate_task(task: &Task, predicted: Option<&str>, db: &Path, limits: Limits) -> EvalRecord {
    let gold_sql = task.gold_sql.clone().unwrap_or_default();
    let mut record = EvalRecord {
        question_id: task.question_id,
        db_id: task.db_id.clone(),
        tier: task.difficulty_tier,
        predicted_sql: predicted.map(str::to_string),
        gold_sql: gold_sql.clone(),
        ex: false,
        soft_f1: 0.0,
        valid: true,
        note: String::new(),
    };
    let gold = execute(&gold_sql, db, limits);
    if let Some(e) = &gold.error {
        record.valid = false;
        record.note = format!("gold failed: {e}");
        return record;
    }
    let Some(pred_sql) = predicted else {
        record.note = "no prediction".into();
        return record;
    };
    let pred = execute(pred_sql, db, limits);
    if let Some(e) = &pred.error {
        record.note = format!("prediction failed: {e}");
        return record;
    }
    let ordered = has_outer_order_by(&gold_sql);
    record.ex = output_key(&pred, ordered).ok() == output_key(&gold, ordered).ok();
    record.soft_f1 = if record.ex {
        1.0
    } else {
        soft_f1(&pred.rows, &gold.rows)
    };
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub tier: String,
    pub count: usize,
    /// Percentages; absent when the tier has no valid records.
    pub ex: Option<f64>,
    pub soft_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// simple, moderate, challenging, overall.
    pub tiers: Vec<TierMetrics>,
    pub invalid: usize,
}

impl MetricsReport {
    pub fn tier(&self, name: &str) -> Option<&TierMetrics> {
        self.tiers.iter().find(|t| t.tier == name)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12} {:>6} {:>8} {:>8}\n", "tier", "count", "EX", "SoftF1");
        for t in &self.tiers {
            out.push_str(&format!(
                "{:<12} {:>6} {:>8} {:>8}\n",
                t.tier,
                t.count,
                pct(t.ex),
                pct(t.soft_f1)
            ));
        }
        if self.invalid > 0 {
            out.push_str(&format!("invalid gold queries excluded: {}\n", self.invalid));
        }
        out
    }
}

/// Two-decimal rendering; `-` when undefined.
pub fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub fn aggregate_report(records: &[EvalRecord]) -> MetricsReport {
    let summarize = |name: &str, rows: Vec<&EvalRecord>| {
        let count = rows.len();
        let mean = |f: &dyn Fn(&EvalRecord) -> f64| {
            (count > 0).then(|| 100.0 * rows.iter().map(|r| f(r)).sum::<f64>() / count as f64)
        };
        TierMetrics {
            tier: name.to_string(),
            count,
            ex: mean(&|r| if r.ex { 1.0 } else { 0.0 }),
            soft_f1: mean(&|r| r.soft_f1),
        }
    };
    let valid: Vec<&EvalRecord> = records.iter().filter(|r| r.valid).collect();
    let mut tiers: Vec<TierMetrics> = DifficultyTier::ALL
        .iter()
        .map(|t| {
            summarize(
                t.as_str(),
                valid.iter().copied().filter(|r| r.tier == Some(*t)).collect(),
            )
        })
        .collect();
    tiers.push(summarize("overall", valid.clone()));
    MetricsReport {
        tiers,
        invalid: records.len() - valid.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[&[i64]]) -> Vec<Vec<Value>> {
        v.iter()
            .map(|r| r.iter().map(|x| Value::Integer(*x)).collect())
            .collect()
    }

    #[test]
    fn soft_f1_extra_duplicate_row() {
        let gold = rows(&[&[1, 10], &[2, 20]]);
        let pred = rows(&[&[1, 10], &[2, 20], &[1, 10]]);
        assert!((soft_f1(&pred, &gold) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn soft_f1_partial_cells() {
        // One shared cell of two: tp = 0.5, fp = 0.5, fn = 0.5.
        let gold = rows(&[&[1, 2]]);
        let pred = rows(&[&[1, 3]]);
        assert!((soft_f1(&pred, &gold) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_f1_bounds() {
        let x = rows(&[&[1], &[2], &[2]]);
        assert_eq!(soft_f1(&x, &x), 1.0);
        assert_eq!(soft_f1(&x, &rows(&[&[9]])), 0.0);
        assert_eq!(soft_f1(&[], &[]), 1.0);
        assert_eq!(soft_f1(&[], &x), 0.0);
    }

    #[test]
    fn aggregate_arithmetic() {
        let rec = |tier, ex| EvalRecord {
            question_id: 0,
            db_id: "d".into(),
            tier: Some(tier),
            predicted_sql: None,
            gold_sql: String::new(),
            ex,
            soft_f1: if ex { 1.0 } else { 0.0 },
            valid: true,
            note: String::new(),
        };
        let r = aggregate_report(&[rec(DifficultyTier::Simple, true), rec(DifficultyTier::Simple, false)]);
        assert_eq!(pct(r.tier("simple").unwrap().ex), "50.00");
        assert_eq!(pct(r.tier("moderate").unwrap().ex), "-");
        assert_eq!(pct(r.tier("overall").unwrap().ex), "50.00");
    }

    #[test]
    fn loads_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("dev_databases")).unwrap();
        std::fs::write(
            dir.path().join("dev.json"),
            r#"[{"question_id": 3, "db_id": "a", "question": "q?", "evidence": "h", "SQL": "SELECT 1", "difficulty": "simple"},
                {"question_id": 4, "question": "no db"}]"#,
        )
        .unwrap();
        let dev = load_bird_dev(dir.path()).unwrap();
        assert_eq!(dev.tasks.len(), 1);
        assert_eq!(dev.skipped, 1);
        assert_eq!(dev.tasks[0].hint, "h");
        assert_eq!(dev.tasks[0].difficulty_tier, Some(DifficultyTier::Simple));
        std::fs::write(dir.path().join("dev.json"), "[]").unwrap();
        assert_eq!(load_bird_dev(dir.path()).unwrap().tasks.len(), 0);
        assert!(matches!(
            load_bird_dev(&dir.path().join("nope")),
            Err(EvalError::MissingDataset(_))
        ));
    }
}
