//! Turning free-form model output into typed values.

use std::sync::LazyLock;

use regex::Regex;

use super::{Critique, DifficultyScale, LlmError};
use crate::schema::{FullSchema, SchemaSubset};
use crate::sqltext;

static FIRST_INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").unwrap());

/// First integer in the response, clamped into `scale`.
pub fn parse_difficulty(text: &str, scale: DifficultyScale) -> Result<u32, LlmError> {
    let m = FIRST_INTEGER
        .find(text)
        .ok_or_else(|| LlmError::UnparsableDifficulty(excerpt(text)))?;
    let raw = m.as_str();
    let value: i64 = raw
        .parse()
        .unwrap_or(if raw.starts_with('-') { i64::MIN } else { i64::MAX });
    Ok(value.clamp(i64::from(scale.min), i64::from(scale.max)) as u32)
}

fn excerpt(text: &str) -> String {
    text.chars().take(80).collect()
}

static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*+•]|\d+[.)])\s+").unwrap());

/// Parses a `table.column` listing, keeping only pairs present in `schema`.
pub fn parse_subset(text: &str, schema: &FullSchema) -> Result<SchemaSubset, LlmError> {
    let mut pairs = Vec::new();
    for line in text.lines() {
        let line = LIST_MARKER.replace(line, "");
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let items: Vec<_> = line.split(',').filter_map(|item| resolve_item(item, schema)).collect();
        if items.is_empty() {
            pairs.extend(resolve_item(line, schema));
        } else {
            pairs.extend(items);
        }
    }
    if pairs.is_empty() {
        return Err(LlmError::EmptyAfterFilter);
    }
    Ok(SchemaSubset::new(pairs))
}

fn resolve_item(item: &str, schema: &FullSchema) -> Option<crate::schema::ColumnRef> {
    let cleaned: String = item
        .chars()
        .filter(|c| !matches!(c, '`' | '"' | '\'' | '[' | ']'))
        .collect();
    let cleaned = cleaned.trim().trim_end_matches([';', ',', ':']).trim();
    for (dot, _) in cleaned.match_indices('.') {
        let left = cleaned[..dot].trim();
        let right = cleaned[dot + 1..].trim();
        // Longest left suffix / right prefix first, split on spaces, so that
        // surrounding prose ("use frpm.CDSCode - the key") is tolerated.
        let lefts = suffixes_at_spaces(left);
        let rights = prefixes_at_spaces(right);
        for l in &lefts {
            for r in &rights {
                if let Some(p) = schema.resolve(l, r) {
                    return Some(p);
                }
            }
        }
    }
    None
}

fn suffixes_at_spaces(s: &str) -> Vec<&str> {
    let mut out = vec![s];
    out.extend(s.match_indices(' ').map(|(i, _)| s[i + 1..].trim()));
    out.retain(|x| !x.is_empty());
    out
}

fn prefixes_at_spaces(s: &str) -> Vec<&str> {
    let mut out = vec![s];
    let mut cuts: Vec<usize> = s.match_indices(' ').map(|(i, _)| i).collect();
    cuts.reverse();
    out.extend(cuts.into_iter().map(|i| s[..i].trim()));
    out.retain(|x| !x.is_empty());
    out
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[ \t]*([A-Za-z0-9_-]*)[^\n]*\n?(.*?)(?:```|\z)").unwrap());

static STATEMENT_KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(select|with|insert|update|delete|drop|create|alter|replace|pragma|attach|detach|vacuum|reindex)\b",
    )
    .unwrap()
});

static CTE_HEAD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)^with\s+(recursive\s+)?[\w"`\[\]]+\s*(\([^)]*\)\s*)?as\s*(not\s+)?(materialized\s+)?\("#)
        .unwrap()
});

static BLANK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n").unwrap());

/// Extracts exactly one SELECT/WITH statement from a model response.
///
/// A fenced code block (preferring one tagged `sql`) wins over surrounding
/// prose. Outside a fence, a keyword only counts when written in upper case
/// or at the start of a line, so prose like "select the rows" is skipped.
pub fn extract_sql(text: &str) -> Result<String, LlmError> {
    let fences: Vec<(String, String)> = FENCE
        .captures_iter(text)
        .map(|c| (c[1].to_ascii_lowercase(), c[2].to_string()))
        .collect();
    let fenced = fences
        .iter()
        .find(|(lang, _)| lang == "sql" || lang == "sqlite")
        .or_else(|| fences.first())
        .map(|(_, body)| body.clone());

    let (body, in_fence) = match fenced {
        Some(b) => (b, true),
        None => (text.to_string(), false),
    };

    let start = STATEMENT_KEYWORD.find_iter(&body).find(|m| {
        let word = m.as_str();
        let lower = word.to_ascii_lowercase();
        if lower == "with" && !CTE_HEAD.is_match(&body[m.start()..]) {
            return false;
        }
        if in_fence {
            return true;
        }
        let line_start = body[..m.start()].rfind('\n').map_or(0, |i| i + 1);
        let leading = body[line_start..m.start()].trim();
        word.chars().all(|c| c.is_ascii_uppercase()) || leading.is_empty()
    });
    let Some(m) = start else {
        return Err(LlmError::NoSqlFound);
    };
    let keyword = m.as_str().to_ascii_lowercase();
    let mut statement = &body[m.start()..];
    if !in_fence {
        if let Some(b) = BLANK_LINE.find(statement) {
            statement = &statement[..b.start()];
        }
    }
    let statement = cut_at_semicolon(statement).trim().to_string();
    if keyword != "select" && keyword != "with" {
        return Err(LlmError::NonSelectStatement(statement));
    }
    if statement.is_empty() || !sqltext::starts_with_select(&statement) {
        return Err(LlmError::NoSqlFound);
    }
    Ok(statement)
}

/// Text before the first `;` that is outside quotes.
fn cut_at_semicolon(sql: &str) -> &str {
    let mut quote: Option<char> = None;
    for (i, c) in sql.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' | '`' => quote = Some(c),
                '[' => quote = Some(']'),
                ';' => return &sql[..i],
                _ => {}
            },
        }
    }
    sql
}

static CRITIC_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(score|confidence|mutation[_ ]temperature|assessment)\b["'*]*\s*[:=]"#).unwrap()
});

static LEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?(%?)").unwrap());

/// Parses the critic's key-value block (or a JSON object with the same keys).
/// Numeric fields are clamped into [0, 1].
pub fn parse_critique(text: &str) -> Result<Critique, LlmError> {
    if let Some(c) = parse_critique_json(text) {
        return c;
    }
    let keys: Vec<(String, usize, usize)> = CRITIC_KEY
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (normalize_key(&c[1]), whole.start(), whole.end())
        })
        .collect();
    let value_of = |name: &str| -> Option<&str> {
        let idx = keys.iter().position(|(k, _, _)| k == name)?;
        let from = keys[idx].2;
        let to = keys.get(idx + 1).map_or(text.len(), |k| k.1);
        Some(&text[from..to])
    };
    let number = |name: &str| -> Result<f64, LlmError> {
        let raw = value_of(name).ok_or_else(|| LlmError::MalformedCritique(format!("missing {name}")))?;
        parse_unit_number(raw)
            .ok_or_else(|| LlmError::MalformedCritique(format!("{name} is not numeric: {:?}", raw.trim())))
    };
    Ok(Critique {
        score: number("score")?,
        confidence: number("confidence")?,
        mutation_temperature: number("mutation_temperature")?,
        assessment: value_of("assessment").map(clean_assessment).unwrap_or_default(),
    })
}

fn normalize_key(k: &str) -> String {
    k.to_ascii_lowercase().replace(' ', "_")
}

fn parse_unit_number(raw: &str) -> Option<f64> {
    let raw = raw.trim().trim_start_matches(['"', '\'', '*', '<']).trim();
    let caps = LEADING_NUMBER.captures(raw)?;
    let whole = caps.get(0)?.as_str();
    let percent = !caps[1].is_empty();
    let mut value: f64 = whole.trim_end_matches('%').parse().ok()?;
    if percent {
        value /= 100.0;
    }
    value.is_finite().then(|| value.clamp(0.0, 1.0))
}

fn clean_assessment(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(i) = s.find("```") {
        s = s[..i].trim();
    }
    let s = s.trim_end_matches(['}', ',']).trim().trim_matches(['"', '\'']).trim();
    match s.to_ascii_lowercase().as_str() {
        "" | "none" | "n/a" | "null" | "-" | "<empty>" => String::new(),
        _ => s.to_string(),
    }
}

fn parse_critique_json(text: &str) -> Option<Result<Critique, LlmError>> {
    let open = text.find('{')?;
    let close = text.rfind('}')?;
    if close <= open {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(&text[open..=close]).ok()?;
    let obj = value.as_object()?;
    let field = |name: &str| -> Result<f64, LlmError> {
        let v = obj
            .iter()
            .find(|(k, _)| normalize_key(k) == name)
            .map(|(_, v)| v)
            .ok_or_else(|| LlmError::MalformedCritique(format!("missing {name}")))?;
        let parsed = match v {
            serde_json::Value::Number(n) => n.as_f64().filter(|x| x.is_finite()).map(|x| x.clamp(0.0, 1.0)),
            serde_json::Value::String(s) => parse_unit_number(s),
            _ => None,
        };
        parsed.ok_or_else(|| LlmError::MalformedCritique(format!("{name} is not numeric")))
    };
    let build = || -> Result<Critique, LlmError> {
        let assessment = obj
            .iter()
            .find(|(k, _)| normalize_key(k) == "assessment")
            .and_then(|(_, v)| v.as_str())
            .map(clean_assessment)
            .unwrap_or_default();
        Ok(Critique {
            score: field("score")?,
            confidence: field("confidence")?,
            mutation_temperature: field("mutation_temperature")?,
            assessment,
        })
    };
    Some(build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnDef, ColumnRef, TableDef};
    use proptest::prelude::*;

    fn schools() -> FullSchema {
        let col = |n: &str| ColumnDef {
            name: n.into(),
            datatype: "TEXT".into(),
            example_values: vec![],
        };
        FullSchema::new(
            "california_schools",
            vec![
                TableDef {
                    name: "frpm".into(),
                    columns: vec![col("CDSCode"), col("Charter School (Y/N)")],
                },
                TableDef {
                    name: "schools".into(),
                    columns: vec![col("CDSCode"), col("County")],
                },
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn difficulty_examples() {
        let scale = DifficultyScale::default();
        assert_eq!(parse_difficulty("3", scale).unwrap(), 3);
        assert_eq!(parse_difficulty("7", scale).unwrap(), 5);
        assert_eq!(parse_difficulty("I rate this 4 of 5", scale).unwrap(), 4);
        assert_eq!(parse_difficulty("-2", scale).unwrap(), 1);
        assert_eq!(parse_difficulty("99999999999999999999999", scale).unwrap(), 5);
        assert!(matches!(
            parse_difficulty("hard", scale),
            Err(LlmError::UnparsableDifficulty(_))
        ));
    }

    #[test]
    fn subset_examples() {
        let s = schools();
        let both = parse_subset("frpm.CDSCode\nschools.CDSCode", &s).unwrap();
        assert_eq!(both.len(), 2);
        let one = parse_subset("frpm.CDSCode\nfrpm.Imaginary", &s).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            parse_subset("ghost.column\nnothing here", &s),
            Err(LlmError::EmptyAfterFilter)
        ));
    }

    #[test]
    fn subset_formats() {
        let s = schools();
        let text = "Here you go:\n1. `frpm`.`Charter School (Y/N)` - charter flag\n- SCHOOLS.county\n[\"frpm.CDSCode\", \"schools.CDSCode\"]";
        let got = parse_subset(text, &s).unwrap();
        let expected = SchemaSubset::new([
            ColumnRef::new("frpm", "Charter School (Y/N)"),
            ColumnRef::new("schools", "County"),
            ColumnRef::new("frpm", "CDSCode"),
            ColumnRef::new("schools", "CDSCode"),
        ]);
        assert_eq!(got, expected);
    }

    #[test]
    fn extract_fenced() {
        assert_eq!(extract_sql("```sql\nSELECT 1\n```").unwrap(), "SELECT 1");
        assert_eq!(
            extract_sql("Sure.\n```\nselect a from t;\n```\nDone").unwrap(),
            "select a from t"
        );
    }

    #[test]
    fn extract_from_prose() {
        assert_eq!(
            extract_sql("Here is the query: SELECT a FROM t").unwrap(),
            "SELECT a FROM t"
        );
        assert_eq!(
            extract_sql("We select the rows with a join.\nSELECT a FROM t\n\nThis returns a.").unwrap(),
            "SELECT a FROM t"
        );
    }

    #[test]
    fn extract_rejects_writes() {
        assert!(matches!(
            extract_sql("DROP TABLE t"),
            Err(LlmError::NonSelectStatement(_))
        ));
        assert!(matches!(
            extract_sql("```sql\nDELETE FROM t\n```"),
            Err(LlmError::NonSelectStatement(_))
        ));
        assert!(matches!(extract_sql("I don't know."), Err(LlmError::NoSqlFound)));
    }

    #[test]
    fn extract_multiline_cte() {
        let text = "```sql\nWITH top AS (\n  SELECT a FROM t\n)\nSELECT * FROM top;\n```";
        assert_eq!(
            extract_sql(text).unwrap(),
            "WITH top AS (\n  SELECT a FROM t\n)\nSELECT * FROM top"
        );
    }

    #[test]
    fn extract_ignores_semicolons_in_literals() {
        assert_eq!(
            extract_sql("```sql\nSELECT 'a;b' FROM t; DROP TABLE t\n```").unwrap(),
            "SELECT 'a;b' FROM t"
        );
    }

    #[test]
    fn critique_key_value_block() {
        let text = "```\nscore: 0.8\nconfidence: 0.9\nmutation_temperature: 0.25\nassessment: add DISTINCT\n```";
        let c = parse_critique(text).unwrap();
        assert_eq!(
            c,
            Critique {
                score: 0.8,
                confidence: 0.9,
                mutation_temperature: 0.25,
                assessment: "add DISTINCT".into()
            }
        );
    }

    #[test]
    fn critique_inline_payload() {
        let c = parse_critique("{score:0.8, confidence:0.9, mutation_temperature:0.25, assessment:\"add DISTINCT\"}")
            .unwrap();
        assert_eq!((c.score, c.confidence, c.mutation_temperature), (0.8, 0.9, 0.25));
        assert_eq!(c.assessment, "add DISTINCT");
    }

    #[test]
    fn critique_json_and_clamp() {
        let c =
            parse_critique(r#"{"score": 1.3, "confidence": "90%", "mutation_temperature": -0.5, "assessment": null}"#)
                .unwrap();
        assert_eq!(c.score, 1.0);
        assert_eq!(c.confidence, 0.9);
        assert_eq!(c.mutation_temperature, 0.0);
        assert_eq!(c.assessment, "");
    }

    #[test]
    fn critique_missing_or_bad_fields() {
        assert!(matches!(
            parse_critique("score: 0.5\nmutation_temperature: 0.1\nassessment:"),
            Err(LlmError::MalformedCritique(_))
        ));
        assert!(matches!(
            parse_critique("score: high\nconfidence: 0.5\nmutation_temperature: 0.1"),
            Err(LlmError::MalformedCritique(_))
        ));
        assert!(matches!(
            parse_critique(r#"{"score": 0.5, "confidence": 0.5}"#),
            Err(LlmError::MalformedCritique(_))
        ));
    }

    #[test]
    fn critique_blank_and_multiline_assessment() {
        let c = parse_critique("score: 1\nconfidence: 1\nmutation_temperature: 0\nassessment:\n").unwrap();
        assert!(!c.wants_changes());
        let c = parse_critique(
            "score: 0.4\nconfidence: 0.6\nmutation_temperature: 0.7\nassessment: join schools\non CDSCode",
        )
        .unwrap();
        assert_eq!(c.assessment, "join schools\non CDSCode");
        let c =
            parse_critique("**Score**: 0.4\n**Confidence**: 0.6\n**Mutation temperature**: 0.7\n**Assessment**: None")
                .unwrap();
        assert_eq!(c.mutation_temperature, 0.7);
        assert_eq!(c.assessment, "");
    }

    proptest! {
        #[test]
        fn critique_reals_stay_in_unit_interval(
            s in "[-+]?[0-9]{0,4}(\\.[0-9]{0,6})?([eE][-+]?[0-9]{1,3})?%?",
            k in "[-+]?[0-9]{0,4}(\\.[0-9]{0,6})?",
            t in "[-+]?[0-9]{0,4}(\\.[0-9]{0,6})?",
        ) {
            let text = format!("score: {s}\nconfidence: {k}\nmutation_temperature: {t}\nassessment: x");
            if let Ok(c) = parse_critique(&text) {
                for v in [c.score, c.confidence, c.mutation_temperature] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn difficulty_in_range_or_error(text in "\\PC{0,40}") {
            match parse_difficulty(&text, DifficultyScale::default()) {
                Ok(c) => prop_assert!((1..=5).contains(&c)),
                Err(e) => prop_assert!(matches!(e, LlmError::UnparsableDifficulty(_))),
            }
        }

        #[test]
        fn subsets_stay_inside_schema(text in "(frpm|schools|ghost)\\.(CDSCode|County|Nope)(\n(frpm|schools|x)\\.(CDSCode|County|Nope)){0,5}") {
            let s = schools();
            if let Ok(sub) = parse_subset(&text, &s) {
                for p in sub.pairs() {
                    prop_assert!(s.contains(p));
                }
            }
        }
    }
}
