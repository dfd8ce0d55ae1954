//! Offline stand-in for a model: every answer is a pure function of the
//! prompt text, the role temperature and the call seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LlmBackend, LlmError, LlmRequest, Role};
use crate::schema::{quote_ident, ColumnRef, COLUMN_LINE_PREFIX};
use crate::util::{mix, stable_hash};

const NOISE_SALT: u64 = 0x6e_6f69_7365;
const MAX_SUBSET: usize = 4;
const MAX_NOISE_LIMIT: u32 = 20;

/// Deterministic oracle for tests, demos and the diversity experiment.
///
/// `gen_query` builds its query from the column lines of the schema block:
/// the first listed column fixes the primary table, its first two listed
/// columns are projected, and every other listed column becomes an
/// `IS NOT NULL` filter. Distinct column sets, or distinct leading order,
/// therefore give distinct queries. With probability equal to the sampling
/// temperature, decided from the seed alone, a `LIMIT` clause is appended.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticBackend;

impl SyntheticBackend {
    pub fn new() -> Self {
        Self
    }
}

impl LlmBackend for SyntheticBackend {
    fn complete(&self, request: &LlmRequest<'_>) -> Result<String, LlmError> {
        let prompt = request.prompt;
        let prompt_hash = stable_hash(prompt.as_bytes());
        let temperature = request.config.sampling_temperature;
        Ok(match request.role {
            Role::Difficulty => {
                let question = question_line(prompt).unwrap_or(prompt);
                format!("{}", 1 + stable_hash(question.as_bytes()) % 5)
            }
            Role::SchemaSubset => {
                let columns = listed_columns(prompt);
                if columns.is_empty() {
                    return Ok("No columns are relevant.".into());
                }
                let seed = if temperature == 0.0 {
                    prompt_hash
                } else {
                    mix(prompt_hash, request.seed)
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let k = rng.random_range(1..=columns.len().min(MAX_SUBSET));
                let mut picked = sample(&mut rng, columns.len(), k).into_vec();
                picked.sort_unstable();
                picked
                    .into_iter()
                    .map(|i| format!("`{}`.`{}`", columns[i].table, columns[i].column))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            Role::GenQuery => {
                let columns = listed_columns(prompt);
                let Some(mut sql) = base_query(&columns) else {
                    return Ok("The schema is empty, so I cannot write a query.".into());
                };
                let mut noise = ChaCha8Rng::seed_from_u64(mix(request.seed, NOISE_SALT));
                let roll: f64 = noise.random();
                let limit = noise.random_range(1..=MAX_NOISE_LIMIT);
                if roll < temperature {
                    sql.push_str(&format!(" LIMIT {limit}"));
                }
                format!("```sql\n{sql}\n```")
            }
            Role::Critic => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(prompt_hash, request.seed));
                let mut score: f64 = rng.random_range(0.3..=1.0);
                if prompt.contains("(0 rows)") {
                    score *= 0.3;
                }
                let confidence: f64 = rng.random_range(0.5..=1.0);
                let mutation_temperature: f64 = rng.random_range(0.0..=0.6);
                let candidate = fenced_sql(prompt).unwrap_or_default();
                let assessment = if rng.random_bool(0.5) {
                    suggestion(&candidate)
                } else {
                    ""
                };
                format!(
                    "```\nscore: {score:.3}\nconfidence: {confidence:.3}\nmutation_temperature: {mutation_temperature:.3}\nassessment: {assessment}\n```"
                )
            }
            Role::Mutate => {
                let Some(candidate) = fenced_sql(prompt) else {
                    return Ok("There is no query to revise.".into());
                };
                format!("```sql\n{}\n```", revise(&candidate))
            }
        })
    }

    fn name(&self) -> &str {
        "synthetic"
    }
}

fn question_line(prompt: &str) -> Option<&str> {
    prompt.lines().find_map(|l| l.strip_prefix("Question: "))
}

fn fenced_sql(prompt: &str) -> Option<String> {
    let start = prompt.find("```sql\n")? + "```sql\n".len();
    let len = prompt[start..].find("\n```")?;
    Some(prompt[start..start + len].to_string())
}

/// Column lines of a rendered schema block, in rendered order.
fn listed_columns(prompt: &str) -> Vec<ColumnRef> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix(COLUMN_LINE_PREFIX))
        .filter_map(|l| {
            let (table, rest) = take_backticked(l)?;
            let (column, _) = take_backticked(rest.strip_prefix('.')?)?;
            Some(ColumnRef::new(table, column))
        })
        .collect()
}

fn take_backticked(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('`')?;
    let mut out = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '`' {
            if let Some((_, '`')) = chars.peek() {
                chars.next();
                out.push('`');
            } else {
                return Some((out, &body[i + 1..]));
            }
        } else {
            out.push(c);
        }
    }
    None
}

fn base_query(columns: &[ColumnRef]) -> Option<String> {
    let primary = &columns.first()?.table;
    let own: Vec<&ColumnRef> = columns.iter().filter(|c| &c.table == primary).collect();
    let projected: Vec<String> = own.iter().take(2).map(|c| quote_ident(&c.column)).collect();
    let mut filters: Vec<String> = own[projected.len()..]
        .iter()
        .map(|c| format!("{} IS NOT NULL", quote_ident(&c.column)))
        .collect();
    filters.sort();

    let mut others: Vec<&str> = columns
        .iter()
        .map(|c| c.table.as_str())
        .filter(|t| t != primary)
        .collect();
    others.sort_unstable();
    others.dedup();
    for table in others {
        let mut conds: Vec<String> = columns
            .iter()
            .filter(|c| c.table == table)
            .map(|c| format!("{} IS NOT NULL", quote_ident(&c.column)))
            .collect();
        conds.sort();
        filters.push(format!(
            "EXISTS (SELECT 1 FROM {} WHERE {})",
            quote_ident(table),
            conds.join(" AND ")
        ));
    }

    let mut sql = format!("SELECT {} FROM {}", projected.join(", "), quote_ident(primary));
    if !filters.is_empty() {
        sql.push_str(" WHERE ");
        sql.push_str(&filters.join(" AND "));
    }
    Some(sql)
}

fn suggestion(sql: &str) -> &'static str {
    if !sql.contains("DISTINCT") {
        "Add DISTINCT so repeated rows are collapsed."
    } else if sql.contains(" LIMIT ") {
        "Drop the LIMIT clause; the question asks for every matching row."
    } else {
        "Return only the first few rows."
    }
}

fn revise(sql: &str) -> String {
    if !sql.contains("DISTINCT") {
        sql.replacen("SELECT ", "SELECT DISTINCT ", 1)
    } else if let Some(i) = sql.rfind(" LIMIT ") {
        sql[..i].to_string()
    } else {
        format!("{sql} LIMIT 5")
    }
}
