//! Read-only execution of candidate queries and canonical output keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::sqltext;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_ROWS: usize = 10_000;
/// Decimal places kept when comparing real values.
pub const REAL_DECIMALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    #[serde(with = "duration_ms", rename = "timeout_ms")]
    pub timeout: Duration,
    pub max_rows: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob { blob: String },
}

impl Value {
    fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Blob {
                blob: b.iter().map(|x| format!("{x:02x}")).collect(),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(t) => f.write_str(t),
            Value::Blob { blob } => write!(f, "x'{blob}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecErrorKind {
    Syntax,
    MissingRelation,
    Timeout,
    /// Not a single read-only SELECT/WITH statement.
    Rejected,
    /// Database could not be opened.
    Unavailable,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Outcome of running one query. `error` and `rows` are mutually exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub error: Option<ExecError>,
    pub rows: Vec<Vec<Value>>,
    pub column_names: Vec<String>,
    pub truncated: bool,
    pub elapsed: Duration,
}

impl ExecutionResult {
    fn failed(kind: ExecErrorKind, message: impl Into<String>, elapsed: Duration) -> Self {
        Self {
            error: Some(ExecError {
                kind,
                message: message.into(),
            }),
            rows: Vec::new(),
            column_names: Vec::new(),
            truncated: false,
            elapsed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("cannot compute an output key for a failed execution ({0})")]
    ErroredExecution(ExecError),
}

/// A read-only connection to one task database.
pub struct Sandbox {
    conn: Option<Connection>,
    open_error: Option<String>,
    path: PathBuf,
    limits: Limits,
}

impl fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sandbox")
            .field("path", &self.path)
            .field("limits", &self.limits)
            .finish()
    }
}

impl Sandbox {
    /// Opens `db_path` read-only. Open failures are reported by every
    /// subsequent [`Sandbox::execute`] call as an `Unavailable` error.
    pub fn open(db_path: &Path, limits: Limits) -> Self {
        let opened = if db_path.is_file() {
            Connection::open_with_flags(
                db_path,
                OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
            )
            .and_then(|c| {
                c.pragma_update(None, "query_only", true)?;
                Ok(c)
            })
            .map_err(|e| e.to_string())
        } else {
            Err("no such file".to_string())
        };
        let (conn, open_error) = match opened {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e)),
        };
        Self {
            conn,
            open_error,
            path: db_path.to_path_buf(),
            limits,
        }
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn execute(&self, sql: &str) -> ExecutionResult {
        let start = Instant::now();
        let Some(conn) = &self.conn else {
            return ExecutionResult::failed(
                ExecErrorKind::Unavailable,
                format!(
                    "{}: {}",
                    self.path.display(),
                    self.open_error.as_deref().unwrap_or("unavailable")
                ),
                start.elapsed(),
            );
        };
        let timeout = self.limits.timeout;
        let deadline = start + timeout;
        if let Err(e) = conn.progress_handler(1_000, Some(move || Instant::now() > deadline)) {
            return ExecutionResult::failed(ExecErrorKind::Other, e.to_string(), start.elapsed());
        }
        let outcome = run_query(conn, sql, self.limits.max_rows);
        let _ = conn.progress_handler(0, None::<fn() -> bool>);
        let elapsed = start.elapsed();
        match outcome {
            Ok((column_names, rows, truncated)) => ExecutionResult {
                error: None,
                rows,
                column_names,
                truncated,
                elapsed,
            },
            Err(e) => {
                let (kind, message) = classify(&e);
                let message = if kind == ExecErrorKind::Timeout {
                    format!("exceeded {} ms", timeout.as_millis())
                } else {
                    message
                };
                ExecutionResult::failed(kind, message, elapsed)
            }
        }
    }
}

type QueryOutput = (Vec<String>, Vec<Vec<Value>>, bool);

fn run_query(conn: &Connection, sql: &str, max_rows: usize) -> Result<QueryOutput, rusqlite::Error> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() || !sqltext::starts_with_select(sql) {
        return Err(rusqlite::Error::InvalidQuery);
    }
    let column_names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let width = column_names.len();
    let mut rows = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        if rows.len() == max_rows {
            truncated = true;
            break;
        }
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            out.push(Value::from_ref(row.get_ref(i)?));
        }
        rows.push(out);
    }
    Ok((column_names, rows, truncated))
}

fn classify(e: &rusqlite::Error) -> (ExecErrorKind, String) {
    let message = e.to_string();
    let lower = message.to_ascii_lowercase();
    let kind = match e {
        rusqlite::Error::SqliteFailure(err, _) if err.code == ErrorCode::OperationInterrupted => ExecErrorKind::Timeout,
        rusqlite::Error::InvalidQuery | rusqlite::Error::MultipleStatement => ExecErrorKind::Rejected,
        _ if lower.contains("interrupted") => ExecErrorKind::Timeout,
        _ if lower.contains("no such table") || lower.contains("no such column") || lower.contains("no such view") => {
            ExecErrorKind::MissingRelation
        }
        _ if lower.contains("syntax error")
            || lower.contains("incomplete input")
            || lower.contains("unrecognized token") =>
        {
            ExecErrorKind::Syntax
        }
        _ => ExecErrorKind::Other,
    };
    (kind, message)
}

/// Opens `db_path` and runs a single query.
pub fn execute(sql: &str, db_path: &Path, limits: Limits) -> ExecutionResult {
    Sandbox::open(db_path, limits).execute(sql)
}

/// Canonical identity of an execution output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputKey(String);

impl OutputKey {
    /// Wraps an already canonical key, e.g. one read back from a trace.
    pub fn from_raw(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OutputKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Normalized cell: `None` is SQL NULL; other values carry a type tag so that
/// text `'1'` and number `1` stay distinct.
pub type CanonicalCell = Option<String>;

pub fn canonical_cell(v: &Value) -> CanonicalCell {
    match v {
        Value::Null => None,
        Value::Integer(i) => Some(format!("n:{i}")),
        Value::Real(r) => Some(format!("n:{}", canonical_real(*r))),
        Value::Text(t) => Some(format!("s:{}", t.trim_end())),
        Value::Blob { blob } => Some(format!("b:{blob}")),
    }
}

fn canonical_real(r: f64) -> String {
    if !r.is_finite() {
        return r.to_string();
    }
    let s = format!("{r:.prec$}", prec = REAL_DECIMALS);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn canonical_rows(rows: &[Vec<Value>]) -> Vec<Vec<CanonicalCell>> {
    rows.iter().map(|r| r.iter().map(canonical_cell).collect()).collect()
}

/// Builds the output key. Rows are sorted unless `order_sensitive`; duplicate
/// rows are kept. Truncated outputs never share a key with complete ones.
pub fn output_key(result: &ExecutionResult, order_sensitive: bool) -> Result<OutputKey, ExecutorError> {
    if let Some(err) = &result.error {
        return Err(ExecutorError::ErroredExecution(err.clone()));
    }
    let mut rows = canonical_rows(&result.rows);
    if !order_sensitive {
        rows.sort();
    }
    let body = serde_json::to_string(&rows).expect("canonical rows serialize");
    Ok(OutputKey(if result.truncated {
        format!("truncated:{body}")
    } else {
        body
    }))
}

/// Output key with order sensitivity taken from the query's outermost ORDER BY.
pub fn output_key_for(sql: &str, result: &ExecutionResult) -> Result<OutputKey, ExecutorError> {
    output_key(result, sqltext::has_outer_order_by(sql))
}

/// Text rendering of the first `max_rows` rows for critic prompts.
pub fn render_preview(result: &ExecutionResult, max_rows: usize) -> String {
    if let Some(err) = &result.error {
        return format!("error: {err}");
    }
    let mut out = String::new();
    out.push_str(&result.column_names.join(" | "));
    out.push('\n');
    for row in result.rows.iter().take(max_rows) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" | "));
        out.push('\n');
    }
    let total = result.rows.len();
    if total > max_rows {
        out.push_str(&format!("({max_rows} of {total} rows shown"));
    } else {
        out.push_str(&format!("({total} rows"));
    }
    if result.truncated {
        out.push_str(", output truncated at the row cap");
    }
    out.push(')');
    out
}
