//! Database schemas, schema subsets and their prompt rendering.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

/// Number of distinct sample values kept per column.
pub const EXAMPLE_VALUES_PER_COLUMN: usize = 3;

/// Fingerprint of the empty subset. Never produced by a nonempty subset because
/// every rendered pair contains an unescaped `.`.
pub const EMPTY_FINGERPRINT: &str = "<empty>";

const MAX_EXAMPLE_CHARS: usize = 80;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read database {path}: {reason}")]
    UnreadableDatabase { path: String, reason: String },
    #[error("database {0} has no user tables")]
    EmptySchema(String),
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {column} in table {table}")]
    DuplicateColumn { table: String, column: String },
    #[error("pair {0} is not part of the schema")]
    PairNotInSchema(ColumnRef),
}

/// A (table, column) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    /// Declared SQL type, possibly empty.
    pub datatype: String,
    pub example_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

/// Every user table of one database, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullSchema {
    pub db_id: String,
    tables: Vec<TableDef>,
    foreign_keys: Vec<ForeignKey>,
    views: Vec<String>,
}

impl FullSchema {
    pub fn new(
        db_id: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for table in &tables {
            if !seen.insert(table.name.as_str()) {
                return Err(SchemaError::DuplicateTable(table.name.clone()));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.as_str()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: table.name.clone(),
                        column: col.name.clone(),
                    });
                }
            }
        }
        Ok(Self {
            db_id: db_id.into(),
            tables,
            foreign_keys,
            views: Vec::new(),
        })
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.foreign_keys
    }

    pub fn views(&self) -> &[String] {
        &self.views
    }

    /// All (table, column) pairs in declaration order.
    pub fn pairs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.tables.iter().flat_map(|t| {
            t.columns
                .iter()
                .map(move |c| ColumnRef::new(t.name.clone(), c.name.clone()))
        })
    }

    pub fn pair_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// The subset holding every pair of the schema.
    pub fn universe(&self) -> SchemaSubset {
        SchemaSubset::new(self.pairs())
    }

    pub fn column(&self, pair: &ColumnRef) -> Option<&ColumnDef> {
        self.tables
            .iter()
            .find(|t| t.name == pair.table)?
            .columns
            .iter()
            .find(|c| c.name == pair.column)
    }

    pub fn contains(&self, pair: &ColumnRef) -> bool {
        self.column(pair).is_some()
    }

    /// Case-insensitive lookup returning the pair with the schema's spelling.
    pub fn resolve(&self, table: &str, column: &str) -> Option<ColumnRef> {
        let t = self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(table))?;
        let c = t.columns.iter().find(|c| c.name.eq_ignore_ascii_case(column))?;
        Some(ColumnRef::new(t.name.clone(), c.name.clone()))
    }
}

/// Canonical, order-independent identity of a [`SchemaSubset`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(String);

impl Fingerprint {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A set of table-column pairs used to seed one query-generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaSubset {
    pairs: BTreeSet<ColumnRef>,
}

impl SchemaSubset {
    pub fn new(pairs: impl IntoIterator<Item = ColumnRef>) -> Self {
        Self {
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn pairs(&self) -> &BTreeSet<ColumnRef> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: &ColumnRef) -> bool {
        self.pairs.contains(pair)
    }

    pub fn is_subset_of(&self, other: &SchemaSubset) -> bool {
        self.pairs.is_subset(&other.pairs)
    }

    pub fn union(&self, other: &SchemaSubset) -> SchemaSubset {
        Self {
            pairs: self.pairs.union(&other.pairs).cloned().collect(),
        }
    }

    pub fn without(&self, pair: &ColumnRef) -> SchemaSubset {
        let mut pairs = self.pairs.clone();
        pairs.remove(pair);
        Self { pairs }
    }

    pub fn tables(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.table.as_str()).collect()
    }

    /// Sorted, escaped `table.column` names joined by `|`.
    pub fn fingerprint(&self) -> Fingerprint {
        if self.pairs.is_empty() {
            return Fingerprint(EMPTY_FINGERPRINT.to_string());
        }
        let mut parts: Vec<String> = self
            .pairs
            .iter()
            .map(|p| format!("{}.{}", escape(&p.table), escape(&p.column)))
            .collect();
        // BTreeSet order is already sorted by the raw names; sorting the
        // escaped form keeps the rule self-contained.
        parts.sort();
        Fingerprint(parts.join("|"))
    }
}

impl FromIterator<ColumnRef> for SchemaSubset {
    fn from_iter<I: IntoIterator<Item = ColumnRef>>(iter: I) -> Self {
        Self::new(iter)
    }
}

fn escape(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.chars() {
        if matches!(ch, '\\' | '.' | '|') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyTier {
    Simple,
    Moderate,
    Challenging,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 3] = [Self::Simple, Self::Moderate, Self::Challenging];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Moderate => "moderate",
            Self::Challenging => "challenging",
        }
    }
}

impl std::str::FromStr for DifficultyTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(Self::Simple),
            "moderate" => Ok(Self::Moderate),
            "challenging" => Ok(Self::Challenging),
            other => Err(format!("unknown difficulty tier {other:?}")),
        }
    }
}

/// One text-to-SQL problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub question_id: i64,
    pub db_id: String,
    pub question: String,
    #[serde(default)]
    pub hint: String,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub difficulty_tier: Option<DifficultyTier>,
}

/// How table and column lines are ordered in a rendered schema block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Declaration order of the full schema.
    Fixed,
    /// Tables shuffled, then columns shuffled within each table.
    SeededRandom(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub include_examples: bool,
    pub include_foreign_keys: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            include_examples: true,
            include_foreign_keys: true,
        }
    }
}

/// Prefix of every column line in a rendered block.
pub const COLUMN_LINE_PREFIX: &str = "- ";
/// Prefix of every foreign-key line in a rendered block.
pub const FOREIGN_KEY_LINE_PREFIX: &str = "fk: ";

/// Renders `subset` as prompt text, one line per pair.
pub fn render_schema_block(
    subset: &SchemaSubset,
    schema: &FullSchema,
    ordering: Ordering,
    options: RenderOptions,
) -> Result<String, SchemaError> {
    if let Some(missing) = subset.pairs().iter().find(|p| !schema.contains(p)) {
        return Err(SchemaError::PairNotInSchema(missing.clone()));
    }

    let mut groups: Vec<(&TableDef, Vec<&ColumnDef>)> = schema
        .tables()
        .iter()
        .filter_map(|t| {
            let cols: Vec<&ColumnDef> = t
                .columns
                .iter()
                .filter(|c| subset.contains(&ColumnRef::new(t.name.clone(), c.name.clone())))
                .collect();
            (!cols.is_empty()).then_some((t, cols))
        })
        .collect();

    if let Ordering::SeededRandom(seed) = ordering {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        groups.shuffle(&mut rng);
        for (_, cols) in groups.iter_mut() {
            cols.shuffle(&mut rng);
        }
    }

    let mut out = String::new();
    for (table, cols) in &groups {
        for col in cols {
            out.push_str(COLUMN_LINE_PREFIX);
            out.push_str(&format!(
                "{}.{} ({})",
                backtick(&table.name),
                backtick(&col.name),
                if col.datatype.trim().is_empty() {
                    "ANY"
                } else {
                    col.datatype.trim()
                }
            ));
            if options.include_examples && !col.example_values.is_empty() {
                let shown: Vec<String> = col
                    .example_values
                    .iter()
                    .map(|v| truncate_chars(v, MAX_EXAMPLE_CHARS))
                    .collect();
                out.push_str(&format!(" e.g. [{}]", shown.join(", ")));
            }
            out.push('\n');
        }
    }

    if options.include_foreign_keys {
        let tables = subset.tables();
        for fk in schema.foreign_keys() {
            if tables.contains(fk.from.table.as_str()) && tables.contains(fk.to.table.as_str()) {
                out.push_str(&format!(
                    "{FOREIGN_KEY_LINE_PREFIX}{}.{} = {}.{}\n",
                    backtick(&fk.from.table),
                    backtick(&fk.from.column),
                    backtick(&fk.to.table),
                    backtick(&fk.to.column)
                ));
            }
        }
    }
    Ok(out)
}

/// Wraps an identifier in backticks, doubling embedded backticks.
pub fn backtick(name: &str) -> String {
    format!("`{}`", name.replace('`', "``"))
}

/// Wraps an identifier in double quotes for use in SQL text.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(max).collect();
        t.push('…');
        t
    }
}

/// Reads every user table of a SQLite database file.
pub fn load_schema(db_path: &Path) -> Result<FullSchema, SchemaError> {
    let unreadable = |reason: String| SchemaError::UnreadableDatabase {
        path: db_path.display().to_string(),
        reason,
    };
    if !db_path.is_file() {
        return Err(unreadable("no such file".into()));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| unreadable(e.to_string()))?;
    let db_id = db_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_schema(&conn, &db_id).map_err(|e| match e {
        ReadError::Sql(e) => unreadable(e.to_string()),
        ReadError::Schema(e) => e,
    })
}

enum ReadError {
    Sql(rusqlite::Error),
    Schema(SchemaError),
}

impl From<rusqlite::Error> for ReadError {
    fn from(e: rusqlite::Error) -> Self {
        Self::Sql(e)
    }
}

fn read_schema(conn: &Connection, db_id: &str) -> Result<FullSchema, ReadError> {
    let mut stmt = conn.prepare(
        "SELECT name, type FROM sqlite_master \
         WHERE type IN ('table', 'view') AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' \
         ORDER BY rowid",
    )?;
    let mut table_names = Vec::new();
    let mut views = Vec::new();
    for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))? {
        let (name, kind) = row?;
        if kind == "view" {
            views.push(name);
        } else {
            table_names.push(name);
        }
    }
    if table_names.is_empty() {
        return Err(ReadError::Schema(SchemaError::EmptySchema(db_id.to_string())));
    }

    let mut tables = Vec::with_capacity(table_names.len());
    let mut primary_keys: Vec<(String, String)> = Vec::new();
    for table in &table_names {
        let mut info = conn.prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")?;
        let cols: Vec<(String, String, i64)> = info
            .query_map([table], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
            .collect::<Result<_, _>>()?;
        let mut columns = Vec::with_capacity(cols.len());
        for (name, datatype, pk) in cols {
            if pk == 1 {
                primary_keys.push((table.clone(), name.clone()));
            }
            let example_values = sample_values(conn, table, &name)?;
            columns.push(ColumnDef {
                name,
                datatype,
                example_values,
            });
        }
        tables.push(TableDef {
            name: table.clone(),
            columns,
        });
    }

    let mut foreign_keys = Vec::new();
    for table in &table_names {
        let mut fk_stmt = conn.prepare("SELECT \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1)")?;
        let rows: Vec<(String, String, Option<String>)> = fk_stmt
            .query_map([table], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
            .collect::<Result<_, _>>()?;
        for (target, from, to) in rows {
            let to = to.or_else(|| {
                primary_keys
                    .iter()
                    .find(|(t, _)| t.eq_ignore_ascii_case(&target))
                    .map(|(_, c)| c.clone())
            });
            if let Some(to) = to {
                foreign_keys.push(ForeignKey {
                    from: ColumnRef::new(table.clone(), from),
                    to: ColumnRef::new(target, to),
                });
            }
        }
    }

    let mut schema = FullSchema::new(db_id, tables, Vec::new()).map_err(ReadError::Schema)?;
    // Foreign keys may name tables with different casing; keep only resolvable ones.
    schema.foreign_keys = foreign_keys
        .into_iter()
        .filter_map(|fk| {
            Some(ForeignKey {
                from: schema.resolve(&fk.from.table, &fk.from.column)?,
                to: schema.resolve(&fk.to.table, &fk.to.column)?,
            })
        })
        .collect();
    schema.views = views;
    Ok(schema)
}

fn sample_values(conn: &Connection, table: &str, column: &str) -> Result<Vec<String>, rusqlite::Error> {
    let sql = format!(
        "SELECT DISTINCT {col} FROM {tab} WHERE {col} IS NOT NULL LIMIT {n}",
        col = quote_ident(column),
        tab = quote_ident(table),
        n = EXAMPLE_VALUES_PER_COLUMN
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        out.push(match row.get_ref(0)? {
            ValueRef::Null => continue,
            ValueRef::Integer(i) => i.to_string(),
            ValueRef::Real(r) => r.to_string(),
            ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
            ValueRef::Blob(b) => format!("<blob {} bytes>", b.len()),
        });
    }
    Ok(out)
}
